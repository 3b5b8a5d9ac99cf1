"""
Report Service
Line-delimited stage records and the consolidated per-pipeline table
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import pandas as pd
from loguru import logger

from utils.errors import DataError
from utils.helpers import compression_ratio
from utils.validators import validate_run_directory

PIPELINE_ORDER = ["pretrain", "joint", "ft_then_prune", "prune_then_ft", "prune_pretrain_then_ft"]
STAGE_ORDER = ["pretrain", "joint", "1st", "2nd"]


# ============================================================================
# Data Models
# ============================================================================

@dataclass
class StageReport:
    """Outcome of one pipeline stage"""
    pipeline: str
    seed: int
    stage: str
    steps: int
    converged: bool
    l_tts: float
    l_reg: float
    lambda_: float
    l_total: float
    density: float
    eval_loss: float
    sparsity_pct: float
    ratio: float
    polarization: Optional[float]
    params_before: int
    params_after: int
    maskable: int

    def to_record(self) -> Dict[str, Any]:
        record = asdict(self)
        record["lambda"] = record.pop("lambda_")
        record["type"] = "stage"
        return record


def dumps_record(record: Dict[str, Any]) -> str:
    """One JSON line with sorted keys"""
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class RecordWriter:
    """Appends JSON Lines records to one file"""

    def __init__(self, path: str):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text("", encoding="utf-8")

    def __call__(self, record: Dict[str, Any]) -> None:
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(dumps_record(record) + "\n")


def read_records(paths: Iterable[Path]) -> List[Dict[str, Any]]:
    """Parse every line of every file; malformed lines raise DataError"""
    records = []
    for path in paths:
        for number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{number}: malformed record ({e})") from None
    return records


class ReportService:
    """
    Service class for experiment reports
    Consolidates stage records of many runs into one table
    """

    def stage_frame(self, records: List[Dict[str, Any]]) -> pd.DataFrame:
        """Flat frame of stage records with the ratio recomputed from raw counts"""
        stages = [r for r in records if r.get("type") == "stage"]
        if not stages:
            raise DataError("no stage records found")
        df = pd.DataFrame(stages)
        df["ratio"] = [compression_ratio(b, a) for b, a in zip(df["params_before"], df["params_after"])]
        return df

    def summarize(self, df: pd.DataFrame) -> pd.DataFrame:
        """
        Mean and spread per pipeline and stage

        Args:
            df: Output of stage_frame

        Returns:
            DataFrame indexed by (pipeline, stage)
        """
        grouped = df.groupby(["pipeline", "stage"], sort=False)
        table = grouped.agg(
            seeds=("seed", "nunique"),
            sparsity_pct=("sparsity_pct", "mean"),
            sparsity_std=("sparsity_pct", "std"),
            ratio=("ratio", "mean"),
            eval_loss=("eval_loss", "mean"),
            eval_loss_std=("eval_loss", "std"),
            density=("density", "mean"),
            polarization=("polarization", "mean"),
        )
        table = table.fillna({"sparsity_std": 0.0, "eval_loss_std": 0.0})
        order = {
            (p, s): (PIPELINE_ORDER.index(p) if p in PIPELINE_ORDER else len(PIPELINE_ORDER),
                     STAGE_ORDER.index(s) if s in STAGE_ORDER else len(STAGE_ORDER), p, s)
            for p, s in table.index
        }
        return table.loc[sorted(table.index, key=order.get)]

    def build_report(self, run_dir: str) -> pd.DataFrame:
        """
        Consolidated table for every record file in a run directory

        Raises:
            DataError: if the directory is missing or holds no stage records
        """
        result = validate_run_directory(run_dir)
        if not result:
            raise DataError(result.message)
        records = read_records(sorted(Path(run_dir).glob("*.jsonl")))
        table = self.summarize(self.stage_frame(records))
        logger.info(f"Report over {len(table)} pipeline stages from {run_dir}")
        return table

    @staticmethod
    def format_table(table: pd.DataFrame) -> str:
        return table.to_string(float_format=lambda v: f"{v:.4f}")
