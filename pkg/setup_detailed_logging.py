"""
詳細日誌系統設定
用於追蹤模擬執行、規劃退回、稽核違規和錯誤
"""
import copy
import logging
import logging.handlers
import os
from datetime import datetime
import json
import traceback
from typing import Any, Dict, Optional

from dotenv import load_dotenv


class DetailedFormatter(logging.Formatter):
    """自訂格式化器，附加 JSON 上下文區塊"""

    def format(self, record):
        # 添加額外的上下文資訊 (在副本上修改)
        if hasattr(record, 'context'):
            record = copy.copy(record)
            record.msg = f"{record.msg}\n    Context: {json.dumps(record.context, ensure_ascii=False, indent=2, default=str)}"
        return super().format(record)


class DetailedLogger:
    """詳細日誌記錄器"""

    def __init__(self, name: str, log_dir: Optional[str] = None, console_level: int = logging.INFO):
        load_dotenv()
        log_dir = log_dir or os.getenv("KTS_LOG_DIR") or "logs"

        # 掛在根記錄器上，src.* 模組的訊息一併寫入
        self.logger = logging.getLogger()
        self.logger.setLevel(logging.DEBUG)
        self.name = name

        os.makedirs(log_dir, exist_ok=True)

        # 每次啟動一個檔案，檔名含啟動時間
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
        log_file = os.path.join(log_dir, f"{name}_{timestamp}.log")

        # 檔案記錄 DEBUG 以上，逐步訊息由 setup_module_logging 決定是否放行
        file_handler = logging.handlers.RotatingFileHandler(
            log_file,
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5,
            encoding='utf-8'
        )
        file_handler.setLevel(logging.DEBUG)

        detailed_format = (
            "%(asctime)s | %(levelname)-8s | %(name)s | "
            "%(filename)s:%(lineno)d | %(funcName)s | %(message)s"
        )
        file_handler.setFormatter(DetailedFormatter(detailed_format))

        # 控制台處理器
        console_handler = logging.StreamHandler()
        console_handler.setLevel(console_level)
        simple_format = "%(asctime)s | %(levelname)-8s | %(message)s"
        console_handler.setFormatter(logging.Formatter(simple_format))

        # 重複建立時不累積處理器
        self.logger.handlers.clear()
        self.logger.addHandler(file_handler)
        self.logger.addHandler(console_handler)

        self.log_file = log_file
        self.logger.info(f"=== {name} 日誌啟動 ===")
        self.logger.info(f"日誌檔案: {log_file}")

    def log_run_start(self, strategy: str, seed: int, config_digest: str, duration: float):
        """記錄一次執行的開始"""
        extra = {
            'context': {
                'strategy': strategy,
                'seed': seed,
                'config_hash': config_digest,
                'duration_s': duration,
            }
        }
        self.logger.info(f"開始執行: {strategy} (種子 {seed})", extra=extra)

    def log_audit_flag(self, kind: str, flag: Dict[str, Any]):
        """記錄稽核違規"""
        self.logger.error(f"稽核違規: {kind}", extra={'context': flag})

    def log_error_with_trace(self, message: str, error: Exception):
        """記錄錯誤與完整追蹤"""
        trace = traceback.format_exc()
        self.logger.error(f"{message}\n錯誤類型: {type(error).__name__}\n錯誤訊息: {str(error)}\n追蹤:\n{trace}")

    def get_log_file_path(self):
        """取得日誌檔案路徑"""
        return self.log_file


# 全域日誌實例
_logger_instance = None


def get_detailed_logger(name: str = "kuramoto_traffic", log_dir: Optional[str] = None,
                        console_level: int = logging.INFO) -> DetailedLogger:
    """取得或建立詳細日誌記錄器"""
    global _logger_instance
    if _logger_instance is None:
        _logger_instance = DetailedLogger(name, log_dir=log_dir, console_level=console_level)
    return _logger_instance


TICK_MODULES = ("src.engine", "src.planner", "src.qp_solver", "src.kuramoto")


def setup_module_logging(verbose: bool = False):
    """設定各模組的日誌層級"""
    # 逐步訊息量大，預設只保留 INFO 以上
    tick_level = logging.DEBUG if verbose else logging.INFO
    for module in TICK_MODULES:
        logging.getLogger(module).setLevel(tick_level)
