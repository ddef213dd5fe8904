"""
Report Generator Service
Write evaluation summaries as text, plot-ready CSVs, JSON lines and Excel.
"""
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import pandas as pd

from .evaluation import METRICS, EvalSummary

logger = logging.getLogger(__name__)

try:
    import openpyxl
    from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
    from openpyxl.utils import get_column_letter
    OPENPYXL_AVAILABLE = True
except ImportError:
    OPENPYXL_AVAILABLE = False
    logger.warning("openpyxl not installed. Excel generation disabled.")

PathLike = Union[str, Path]

RECORD_COLUMNS = ["id", "phi_gt", "theta_gt", "phi_pred", "theta_pred", "branch", "degenerate"] + list(METRICS)


def _fmt(value: float) -> str:
    return "nan" if value is None or (isinstance(value, float) and math.isnan(value)) else f"{value:.4f}"


def summary_text(summary: EvalSummary, title: str = "EVALUATION SUMMARY", bin_metric: str = "angular") -> str:
    """Human-readable block: one line per metric, then per-bin medians."""
    lines = [
        title,
        "=" * 72,
        f"records: {summary.count}    partial: {str(summary.partial).lower()}",
        "",
        f"{'metric':<10}{'median':>12}{'mean':>12}{'std':>12}{'iqr':>12}{'count':>8}",
    ]
    for name, stats in summary.metrics.items():
        lines.append(
            f"{name:<10}{_fmt(stats.median):>12}{_fmt(stats.mean):>12}"
            f"{_fmt(stats.std):>12}{_fmt(stats.iqr):>12}{stats.count:>8}"
        )
    lines += ["", f"median {bin_metric} error by ground-truth theta:"]
    for b in summary.theta_bins:
        stats = b.stats[bin_metric]
        lines.append(f"  {b.label:<10}{_fmt(stats.median):>12}  (n={stats.count})")
    return "\n".join(lines) + "\n"


def bins_frame(summary: EvalSummary, metric: str) -> pd.DataFrame:
    """One row per theta bin for one metric."""
    return pd.DataFrame([
        {"bin_low": b.low, "bin_high": b.high, "bin": b.label, **b.stats[metric].as_dict()}
        for b in summary.theta_bins
    ])


class ReportGenerator:
    """Write the files of an evaluation run under a common prefix."""

    def __init__(self, prefix: PathLike):
        self.prefix = Path(prefix)
        self.prefix.parent.mkdir(parents=True, exist_ok=True)

    def _path(self, suffix: str) -> Path:
        return self.prefix.parent / f"{self.prefix.name}_{suffix}"

    def write_summary(self, summary: EvalSummary, folds: Optional[Sequence[EvalSummary]] = None) -> str:
        text = summary_text(summary)
        for index, fold in enumerate(folds or [], 1):
            text += "\n" + summary_text(fold, title=f"FOLD {index}/{len(folds)}")
        path = self._path("summary.txt")
        path.write_text(text, encoding="utf-8")
        return str(path)

    def write_metric_csvs(self, summary: EvalSummary) -> List[str]:
        """One CSV per metric, one row per theta bin."""
        paths = []
        for metric in METRICS:
            path = self._path(f"{metric}.csv")
            bins_frame(summary, metric).to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
            paths.append(str(path))
        return paths

    def write_records(self, summary: EvalSummary) -> str:
        """Per-record errors as JSON lines, sorted by id."""
        path = self._path("records.jsonl")
        table = summary.table[RECORD_COLUMNS].sort_values("id")
        table.to_json(path, orient="records", lines=True, double_precision=10)
        return str(path)

    def write_all(self, summary: EvalSummary, folds: Optional[Sequence[EvalSummary]] = None) -> Dict[str, object]:
        return {
            "summary": self.write_summary(summary, folds),
            "csv": self.write_metric_csvs(summary),
            "records": self.write_records(summary),
        }

    def generate_excel(self, summary: EvalSummary, folds: Optional[Sequence[EvalSummary]] = None) -> str:
        """
        Generate an Excel workbook: an overview sheet plus one sheet per metric.

        Returns:
            Path to the generated workbook
        """
        if not OPENPYXL_AVAILABLE:
            raise RuntimeError("Excel generation not available. Install openpyxl: pip install openpyxl")

        wb = openpyxl.Workbook()

        # Styles
        header_font = Font(bold=True, size=11, color="FFFFFF")
        header_fill = PatternFill(start_color="003366", end_color="003366", fill_type="solid")
        thin_border = Border(
            left=Side(style='thin'),
            right=Side(style='thin'),
            top=Side(style='thin'),
            bottom=Side(style='thin')
        )

        # Summary Sheet
        ws = wb.active
        ws.title = "Summary"
        ws.merge_cells("A1:F1")
        ws["A1"] = "Berry orientation evaluation"
        ws["A1"].font = Font(bold=True, size=16, color="003366")
        ws["A1"].alignment = Alignment(horizontal="center")
        ws["A3"] = "Records:"
        ws["B3"] = summary.count
        ws["A4"] = "Partial:"
        ws["B4"] = str(summary.partial).lower()

        overview = [{"metric": name, **stats.as_dict()} for name, stats in summary.metrics.items()]
        self._write_table(ws, overview, 6, header_fill, header_font, thin_border)
        ws.column_dimensions["A"].width = 14

        for metric in METRICS:
            self._add_data_sheet(wb, metric, bins_frame(summary, metric).to_dict("records"),
                                 header_fill, header_font, thin_border)
        for index, fold in enumerate(folds or [], 1):
            rows = [{"metric": name, **stats.as_dict()} for name, stats in fold.metrics.items()]
            self._add_data_sheet(wb, f"fold_{index}", rows, header_fill, header_font, thin_border)

        path = self._path("summary.xlsx")
        wb.save(str(path))
        return str(path)

    def _write_table(self, ws, data: List[Dict], first_row: int, header_fill, header_font, border):
        headers = list(data[0].keys())
        for col, header in enumerate(headers, 1):
            cell = ws.cell(row=first_row, column=col, value=header.replace("_", " ").title())
            cell.font = header_font
            cell.fill = header_fill
            cell.border = border
            ws.column_dimensions[get_column_letter(col)].width = max(12, len(header) + 5)
        for row_idx, row_data in enumerate(data, first_row + 1):
            for col_idx, header in enumerate(headers, 1):
                value = row_data.get(header, "")
                if isinstance(value, float) and math.isnan(value):
                    value = None
                cell = ws.cell(row=row_idx, column=col_idx, value=value)
                cell.border = border

    def _add_data_sheet(self, wb, sheet_name: str, data: List[Dict], header_fill, header_font, border):
        """Add a data sheet to the workbook."""
        ws = wb.create_sheet(title=sheet_name)

        if not data:
            ws["A1"] = "No data available"
            return
        self._write_table(ws, data, 1, header_fill, header_font, border)
