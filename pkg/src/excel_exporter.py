"""
Excel 報表輸出模組
比較報告：摘要、每車點雲、能量損失分解、參數設定
"""
import os
import logging
from typing import Dict, Optional

import pandas as pd

from src.metrics import ComparisonReport

logger = logging.getLogger(__name__)


class ExcelExporter:
    """Excel 報表輸出器"""

    def __init__(self, output_dir: str = "reports"):
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

    def export_comparison(self, report: ComparisonReport, params: Optional[Dict] = None,
                          filename: str = "comparison.xlsx") -> str:
        """輸出策略比較到 Excel"""
        path = os.path.join(self.output_dir, filename)
        try:
            with pd.ExcelWriter(path, engine="xlsxwriter") as writer:
                formats = self._create_formats(writer.book)

                # 工作表1: 摘要
                self._write_summary_sheet(writer, report, formats)

                # 工作表2: 每車點雲
                self._write_point_cloud_sheet(writer, report, formats)

                # 工作表3: 能量損失
                self._write_losses_sheet(writer, report, formats)

                # 工作表4: 參數設定
                if params:
                    self._write_params_sheet(writer, params, formats)

            logger.info(f"Excel 報表已輸出: {path}")
            return path

        except Exception as e:
            logger.error(f"輸出 Excel 錯誤: {e}")
            raise

    def _create_formats(self, workbook) -> Dict:
        """建立 Excel 格式"""
        return {
            "header": workbook.add_format({
                "bold": True,
                "text_wrap": True,
                "valign": "vcenter",
                "align": "center",
                "fg_color": "#4CAF50",
                "font_color": "white",
                "border": 1,
            }),
            "cell_number": workbook.add_format({
                "align": "right",
                "valign": "vcenter",
                "border": 1,
                "num_format": "#,##0.0000",
            }),
            "cell_positive": workbook.add_format({
                "align": "right",
                "valign": "vcenter",
                "border": 1,
                "font_color": "green",
                "num_format": "+#,##0.00;-#,##0.00",
            }),
            "cell_negative": workbook.add_format({
                "align": "right",
                "valign": "vcenter",
                "border": 1,
                "font_color": "red",
                "num_format": "+#,##0.00;-#,##0.00",
            }),
            "title": workbook.add_format({
                "bold": True,
                "font_size": 14,
                "align": "center",
                "valign": "vcenter",
            }),
        }

    def _write_summary_sheet(self, writer, report: ComparisonReport, formats: Dict):
        """寫入摘要工作表"""
        rows = []
        for key, label in (("fuel_g", "平均油耗 (g)"), ("delay_s_per_m", "平均延滯 (s/m)")):
            rows.append({
                "指標": label,
                report.reference: report.means[report.reference][key],
                report.candidate: report.means[report.candidate][key],
                "降低 %": report.reductions_pct[key],
            })
        for key, label in (("fuel_g", "油耗標準差 (g)"), ("delay_s_per_m", "延滯標準差 (s/m)")):
            ref = report.std[report.reference][key]
            cand = report.std[report.candidate][key]
            rows.append({
                "指標": label,
                report.reference: ref,
                report.candidate: cand,
                "降低 %": 100.0 * (ref - cand) / ref if ref else 0.0,
            })
        df = pd.DataFrame(rows)

        sheet_name = "摘要"
        df.to_excel(writer, sheet_name=sheet_name, index=False, startrow=2)
        worksheet = writer.sheets[sheet_name]

        worksheet.merge_range("A1:D1", f"{report.candidate} vs {report.reference}", formats["title"])
        worksheet.write("A2", f"車輛視窗 {report.window[0]}–{report.window[1]}，共 {report.vehicles} 輛")

        worksheet.set_column("A:A", 20)
        worksheet.set_column("B:C", 15, formats["cell_number"])
        worksheet.set_column("D:D", 10)

        worksheet.conditional_format(f"D4:D{len(df) + 3}", {
            "type": "cell", "criteria": ">", "value": 0, "format": formats["cell_positive"],
        })
        worksheet.conditional_format(f"D4:D{len(df) + 3}", {
            "type": "cell", "criteria": "<", "value": 0, "format": formats["cell_negative"],
        })

    def _write_point_cloud_sheet(self, writer, report: ComparisonReport, formats: Dict):
        """寫入每車 (油耗, 延滯) 點雲"""
        df = report.point_cloud
        sheet_name = "點雲"
        df.to_excel(writer, sheet_name=sheet_name, index=False, startrow=1)
        worksheet = writer.sheets[sheet_name]
        worksheet.merge_range("A1:E1", "每車油耗與延滯", formats["title"])
        worksheet.set_column("A:A", 10)
        worksheet.set_column("B:E", 18, formats["cell_number"])
        worksheet.freeze_panes(2, 1)
        worksheet.autofilter(1, 0, len(df) + 1, len(df.columns) - 1)

    def _write_losses_sheet(self, writer, report: ComparisonReport, formats: Dict):
        """寫入能量損失分解"""
        df = report.loss_frame()
        sheet_name = "能量損失"
        df.to_excel(writer, sheet_name=sheet_name, index=False, startrow=1)
        worksheet = writer.sheets[sheet_name]
        worksheet.merge_range("A1:E1", "能量損失分解 (kJ)", formats["title"])
        worksheet.set_column("A:A", 14)
        worksheet.set_column("B:E", 16, formats["cell_number"])

        # 依損失類別的長條圖
        chart = writer.book.add_chart({"type": "column"})
        for col, name in ((1, report.reference), (2, report.candidate)):
            chart.add_series({
                "name": name,
                "categories": [sheet_name, 2, 0, len(df) + 1, 0],
                "values": [sheet_name, 2, col, len(df) + 1, col],
            })
        chart.set_title({"name": "能量損失"})
        worksheet.insert_chart("G2", chart)

    def _write_params_sheet(self, writer, params: Dict, formats: Dict):
        """寫入參數設定工作表"""
        param_data = {"參數類別": [], "參數名稱": [], "設定值": []}
        for category, settings in params.items():
            if isinstance(settings, dict):
                for param, value in settings.items():
                    param_data["參數類別"].append(category)
                    param_data["參數名稱"].append(param)
                    param_data["設定值"].append("" if value is None else str(value))

        df_params = pd.DataFrame(param_data)
        sheet_name = "參數設定"
        df_params.to_excel(writer, sheet_name=sheet_name, index=False, startrow=1)
        worksheet = writer.sheets[sheet_name]
        worksheet.merge_range("A1:C1", "情境參數", formats["title"])
        worksheet.set_column("A:A", 15)
        worksheet.set_column("B:B", 32)
        worksheet.set_column("C:C", 15)
