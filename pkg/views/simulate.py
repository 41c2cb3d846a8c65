import pandas as pd
import plotly.graph_objects as go
import streamlit as st

from flowlab.cli import simulate_scenario
from flowlab.errors import FlowLabError, NonSPDError, NumericalFailure
from views.helpers import current_scenario, load_run, page_title, to_excel_bytes


def monitor_figure(name: str, df: pd.DataFrame) -> go.Figure:
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=df["t"], y=df["upper_env"] + df["margin"], mode="lines",
                             line=dict(width=0), showlegend=False, hoverinfo="skip"))
    fig.add_trace(go.Scatter(x=df["t"], y=df["lower_env"] - df["margin"], mode="lines",
                             line=dict(width=0), fill="tonexty", fillcolor="rgba(76,175,80,0.15)",
                             name="envelope ± margin"))
    fig.add_trace(go.Scatter(x=df["t"], y=df["observed_max"], mode="lines", name="observed max",
                             line=dict(color="#AD1457")))
    fig.add_trace(go.Scatter(x=df["t"], y=df["observed_min"], mode="lines", name="observed min",
                             line=dict(color="#1976D2")))
    violated = df[df["violated"].astype(bool)]
    if not violated.empty:
        fig.add_trace(go.Scatter(x=violated["t"], y=violated["observed_max"], mode="markers",
                                 name="violation", marker=dict(color="red", size=8)))
    fig.update_layout(title=f"Bound monitor: {name}", xaxis_title="t", height=380,
                      margin=dict(l=20, r=20, t=50, b=20))
    return fig


def trajectory_figure(df: pd.DataFrame, columns: list[str]) -> go.Figure:
    fig = go.Figure()
    for column in columns:
        fig.add_trace(go.Scatter(x=df["time"], y=df[column], mode="lines", name=column))
    fig.update_layout(title="Recorded values", xaxis_title="t", height=380,
                      margin=dict(l=20, r=20, t=50, b=20))
    return fig


def render_results(run_dir: str):
    run = load_run(run_dir)
    if run is None:
        st.info("No run yet for this scenario.")
        return
    manifest, tables = run["manifest"], run["tables"]

    if manifest.get("status") == "failed":
        st.error("The last run stopped with a numerical failure; see failure.json in the run directory.")
        return

    monitors = {k[len("monitor_"):]: v for k, v in tables.items() if k.startswith("monitor_")}
    col1, col2, col3, col4 = st.columns(4)
    col1.metric("Final time", f"{manifest.get('t_final', 0.0):.4g}")
    col2.metric("Records", manifest.get("records", "-"))
    col3.metric("dt", f"{manifest.get('dt', 0.0):.3e}", help="resolved step size under the CFL limit")
    if monitors:
        ok = manifest.get("monitors_passed", False)
        col4.metric("Bound monitors", "held" if ok else "violated",
                    help="observed extremes against the comparison envelopes plus margin")

    for name, df in monitors.items():
        st.plotly_chart(monitor_figure(name, df), use_container_width=True)
        if "gradient" in name:
            tightest = float((df["observed_max"] * (df["t"] + 1.0) ** 2).max())
            st.caption(f"Smallest C with |dφ|² ≤ C/(t+1)² over the samples: {tightest:.4g}")

    traj = tables.get("trajectory")
    if traj is not None:
        numeric = [c for c in traj.columns if c not in ("time", "checksum")]
        chosen = st.multiselect("Columns to plot", numeric, default=numeric[:2])
        if chosen:
            st.plotly_chart(trajectory_figure(traj, chosen), use_container_width=True)
        st.dataframe(traj, use_container_width=True, hide_index=True)

        col1, col2 = st.columns(2)
        with col1:
            st.download_button(
                label="📥 Download trajectory CSV",
                data=traj.to_csv(index=False).encode("utf-8"),
                file_name="trajectory.csv",
                mime="text/csv",
            )
        with col2:
            st.download_button(
                label="📊 Download Excel workbook",
                data=to_excel_bytes({"trajectory": traj, **monitors}),
                file_name="run_tables.xlsx",
                mime="application/vnd.openxmlformats-officedocument.spreadsheetml.sheet",
            )


def render():
    page_title("▶️ Simulate")
    cfg = current_scenario()
    if cfg is None:
        return

    st.markdown(f"**{cfg.name}**: `{cfg.system}` on a {cfg['grid']['dim']}D grid of "
                f"{cfg['grid']['points']} points per axis, up to t = {cfg['stepper']['t_end']}; "
                f"output in `{cfg.output}`")

    if st.button("Run flow", type="primary"):
        with st.spinner("Integrating..."):
            try:
                simulate_scenario(cfg, cfg.output)
                st.success("✅ Run finished")
            except (NumericalFailure, NonSPDError) as e:
                st.error(f"Numerical failure: {str(e)}")
            except FlowLabError as e:
                st.error(f"Error running scenario: {str(e)}")
        load_run.clear()

    render_results(cfg.output)
