"""
Analytics & Visualization Service
Plotly charts of evaluation results: error distributions and error by theta.
"""
import logging
import math
from pathlib import Path
from typing import Union

import pandas as pd
import plotly.express as px
import plotly.graph_objects as go

logger = logging.getLogger(__name__)

METRIC_LABELS = {
    "kp_top": "Top key point error (px)",
    "kp_tip": "Tip key point error (px)",
    "phi": "Phi error (deg)",
    "theta": "Theta error (deg)",
    "angular": "Angular error (deg)",
}


class ChartService:
    """Generate interactive Plotly charts for evaluation summaries."""

    # Color palette
    COLORS = {
        "primary": "#1a365d",
        "secondary": "#2b6cb0",
        "success": "#48bb78",
        "warning": "#ecc94b",
        "danger": "#fc8181",
        "info": "#4299e1",
    }

    PALETTE = ["#2b6cb0", "#48bb78", "#ecc94b", "#fc8181", "#805ad5", "#ed64a6", "#38b2ac", "#ed8936"]

    @classmethod
    def error_distribution(cls, summary, metric: str = "angular") -> go.Figure:
        """Histogram of one per-record error with median and mean markers."""
        values = summary.table[metric].dropna() if metric in summary.table else pd.Series(dtype=float)
        if values.empty:
            return cls._empty_chart(f"No {metric} errors available")

        df = pd.DataFrame({metric: values})
        fig = px.histogram(
            df,
            x=metric,
            nbins=45,
            title=f"{METRIC_LABELS.get(metric, metric)} over {len(values)} records",
            labels={metric: METRIC_LABELS.get(metric, metric)},
            color_discrete_sequence=[cls.COLORS["secondary"]],
            template="plotly_white",
        )

        stats = summary.metrics[metric]
        fig.add_vline(x=stats.median, line_dash="dash", line_color=cls.COLORS["success"],
                      annotation_text=f"median {stats.median:.2f}")
        fig.add_vline(x=stats.mean, line_dash="dot", line_color=cls.COLORS["danger"],
                      annotation_text=f"mean {stats.mean:.2f}", annotation_position="bottom right")

        fig.update_layout(
            height=400,
            margin=dict(l=20, r=20, t=40, b=20),
            yaxis_title="Records",
        )
        return fig

    @classmethod
    def error_by_theta(cls, summary, metric: str = "angular") -> go.Figure:
        """Median (bars) and mean (markers) error per ground-truth theta bin."""
        rows = [
            {"bin": b.label, "median": b.stats[metric].median, "mean": b.stats[metric].mean, "count": b.stats[metric].count}
            for b in summary.theta_bins
            if b.stats[metric].count > 0
        ]
        if not rows:
            return cls._empty_chart(f"No {metric} errors with theta ground truth")

        df = pd.DataFrame(rows)
        fig = go.Figure()
        fig.add_trace(go.Bar(
            x=df["bin"],
            y=df["median"],
            name="median",
            marker_color=cls.COLORS["secondary"],
            text=[f"n={c}" for c in df["count"]],
            textposition="outside",
        ))
        fig.add_trace(go.Scatter(
            x=df["bin"],
            y=df["mean"],
            name="mean",
            mode="markers",
            marker=dict(size=10, color=cls.COLORS["danger"], symbol="diamond"),
        ))

        overall = summary.metrics[metric].median
        if not math.isnan(overall):
            fig.add_hline(y=overall, line_dash="dash", line_color="gray", opacity=0.6,
                          annotation_text=f"overall median {overall:.2f}")

        fig.update_layout(
            title=f"{METRIC_LABELS.get(metric, metric)} by ground-truth theta",
            xaxis_title="Theta bin (deg)",
            yaxis_title=METRIC_LABELS.get(metric, metric),
            height=400,
            margin=dict(l=20, r=20, t=40, b=20),
            template="plotly_white",
            legend=dict(orientation="h", yanchor="bottom", y=1.02, xanchor="right", x=1),
        )
        return fig

    @classmethod
    def save_html(cls, fig: go.Figure, path: Union[str, Path]) -> str:
        path = Path(path)
        fig.write_html(str(path), include_plotlyjs="cdn")
        logger.info(f"wrote chart {path}")
        return str(path)

    @classmethod
    def _empty_chart(cls, message: str) -> go.Figure:
        """Create empty chart with message."""
        fig = go.Figure()
        fig.add_annotation(
            text=message,
            xref="paper",
            yref="paper",
            x=0.5,
            y=0.5,
            showarrow=False,
            font=dict(size=16, color="gray")
        )
        fig.update_layout(
            height=300,
            xaxis=dict(visible=False),
            yaxis=dict(visible=False),
            template="plotly_white"
        )
        return fig
