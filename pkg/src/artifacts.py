"""
執行產出檔案

每次執行一個目錄：manifest.json、arrivals.csv、trajectory_log.csv、
vehicle_metrics.csv、crossings.csv、audit.json。浮點數以固定格式寫出，
同一 (設定, 種子) 產生逐位元相同的檔案；不寫入任何牆鐘時間。
"""
import hashlib
import json
import os
import logging
from typing import Dict

import pandas as pd

from src import __version__

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = "%.6f"

MANIFEST = "manifest.json"
ARRIVALS = "arrivals.csv"
TRAJECTORY_LOG = "trajectory_log.csv"
VEHICLE_METRICS = "vehicle_metrics.csv"
CROSSINGS = "crossings.csv"
AUDIT = "audit.json"

POINT_CLOUD = "point_cloud.csv"
ENERGY_LOSSES = "energy_losses.csv"
COMPARISON = "comparison.json"
OSCILLATORS = "oscillators.csv"


class RunMismatchError(ValueError):
    """兩次執行的到達流或種子不一致"""


def version_string(config_digest: str) -> str:
    return f"v{__version__}+{config_digest[:7]}"


def write_csv(df: pd.DataFrame, path: str):
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_json(data: Dict, path: str):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_run(run_dir: str, manifest: Dict, arrivals: pd.DataFrame, trajectory: pd.DataFrame,
              metrics: pd.DataFrame, crossings: pd.DataFrame, audit: Dict) -> Dict[str, str]:
    """寫出一次執行的所有檔案，回傳檔名 → 路徑"""
    os.makedirs(run_dir, exist_ok=True)
    paths = {name: os.path.join(run_dir, name)
             for name in (ARRIVALS, TRAJECTORY_LOG, VEHICLE_METRICS, CROSSINGS, AUDIT, MANIFEST)}
    write_csv(arrivals, paths[ARRIVALS])
    write_csv(trajectory, paths[TRAJECTORY_LOG])
    write_csv(metrics, paths[VEHICLE_METRICS])
    write_csv(crossings, paths[CROSSINGS])
    write_json(audit, paths[AUDIT])

    manifest = dict(manifest)
    manifest["schema_version"] = SCHEMA_VERSION
    manifest["arrivals_sha256"] = file_sha256(paths[ARRIVALS])
    write_json(manifest, paths[MANIFEST])
    logger.info(f"執行結果已寫入 {run_dir}")
    return paths


def read_manifest(run_dir: str) -> Dict:
    path = os.path.join(run_dir, MANIFEST)
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise RunMismatchError(f"無法讀取 {path}: {e}") from e


def read_metrics(run_dir: str) -> pd.DataFrame:
    return pd.read_csv(os.path.join(run_dir, VEHICLE_METRICS))


def check_same_stream(manifest_a: Dict, manifest_b: Dict):
    """比較前確認兩次執行使用同一到達流"""
    problems = []
    if manifest_a.get("seed") != manifest_b.get("seed"):
        problems.append(f"種子不同: {manifest_a.get('seed')} vs {manifest_b.get('seed')}")
    if manifest_a.get("arrivals_sha256") != manifest_b.get("arrivals_sha256"):
        problems.append("到達流內容不同 (arrivals.csv 雜湊不一致)")
    if manifest_a.get("schema_version") != manifest_b.get("schema_version"):
        problems.append("輸出格式版本不同")
    if problems:
        raise RunMismatchError("; ".join(problems))
