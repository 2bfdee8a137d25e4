"""
Statische HTML-Abbildungen (plotly) für das ``report``-Subcommand.
"""

import logging
from pathlib import Path

import plotly.express as px
import plotly.graph_objects as go

logger = logging.getLogger(__name__)

TEMPLATE = "plotly_dark"


def prediction_scatter(frame, title=None):
    """Vorhergesagte vs. gemessene Deltas, eingefärbt nach Fold, mit Identitätslinie."""
    target = frame["target"].iloc[0] if not frame.empty else ""
    fig = px.scatter(
        frame,
        x="true_delta",
        y="pred_delta",
        color=frame["fold"].astype(str),
        hover_name="patient_id",
        template=TEMPLATE,
        labels={"true_delta": f"Gemessenes Δ{target}", "pred_delta": f"Vorhergesagtes Δ{target}", "color": "Fold"},
        title=title or f"Out-of-fold-Vorhersagen: Δ{target}",
        opacity=0.8,
    )
    if not frame.empty:
        low = float(min(frame["true_delta"].min(), frame["pred_delta"].min()))
        high = float(max(frame["true_delta"].max(), frame["pred_delta"].max()))
        fig.add_trace(go.Scatter(
            x=[low, high], y=[low, high], mode="lines", name="Identität",
            line=dict(color="#EF553B", dash="dash"),
        ))
    return fig


def fused_sequence_figure(sequence):
    """Glukose und Bewegungsbetrag einer fusionierten Sequenz auf zwei y-Achsen."""
    frame = sequence.to_frame()
    fig = go.Figure()
    fig.add_trace(go.Scatter(
        x=frame["timestamp"], y=frame["glucose"], name="Glukose (mg/dL)", line=dict(color="#00CC96"),
    ))
    fig.add_trace(go.Scatter(
        x=frame["timestamp"], y=frame["dx"] + frame["dy"] + frame["dz"],
        name="Bewegung (dx+dy+dz)", yaxis="y2", line=dict(color="#636EFA"),
    ))
    fig.update_layout(
        template=TEMPLATE,
        title=f"Fusionierte Sequenz {sequence.patient_id}",
        yaxis=dict(title="Glukose"),
        yaxis2=dict(title="Bewegung", overlaying="y", side="right"),
        legend=dict(x=0, y=1.2, orientation="h"),
        hovermode="x unified",
    )
    return fig


def write_figure(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs="cdn")
    logger.info(f"Abbildung geschrieben: {path}")
    return path
