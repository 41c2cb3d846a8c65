import plotly.graph_objects as go
import streamlit as st

from flowlab.cli import scenario_spectrum
from flowlab.errors import FlowLabError
from flowlab.outputs import RunDirectory
from views.helpers import current_scenario, page_title


def eigenvalue_figure(report) -> go.Figure:
    colors = ["#2E7D32" if abs(v) <= report.tol else ("#AD1457" if v > report.tol else "#1976D2")
              for v in report.eigenvalues]
    fig = go.Figure(go.Bar(x=list(range(len(report.eigenvalues))), y=report.eigenvalues, marker_color=colors))
    fig.add_hline(y=0.0, line_color="#444")
    fig.update_layout(title=f"{report.block} ({report.system}): top eigenvalues",
                      xaxis_title="index", yaxis_title="eigenvalue", height=400,
                      margin=dict(l=20, r=20, t=50, b=20))
    return fig


def render():
    page_title("📈 Spectrum")
    cfg = current_scenario()
    if cfg is None:
        return

    spec = cfg["spectrum"]
    st.markdown(f"Block `{spec['block']}` of the `{cfg.system}` system on a {cfg['grid']['dim']}D grid, "
                f"{spec['k']} eigenvalues.")

    if st.button("Compute spectrum", type="primary"):
        with st.spinner("Assembling and solving..."):
            try:
                report = scenario_spectrum(cfg)
                out = RunDirectory(cfg.output)
                out.write_spectrum(report)
                out.write_manifest(cfg, "spectrum", extra={"verdict": report.verdict, "top": report.top})
                st.session_state["last_spectrum"] = report
            except FlowLabError as e:
                st.error(f"Error computing spectrum: {str(e)}")

    report = st.session_state.get("last_spectrum")
    if report is None:
        return

    col1, col2, col3, col4 = st.columns(4)
    col1.metric("Top eigenvalue", f"{report.top:.6g}")
    col2.metric("Kernel dimension", report.kernel_dim, help=f"|eigenvalue| ≤ {report.tol:.2e}")
    col3.metric("Gap", f"{report.gap:.4g}", help="smallest |eigenvalue| outside the kernel")
    col4.metric("Verdict", report.verdict)
    if not report.converged:
        st.warning("The iterative eigensolver did not converge for every requested eigenvalue.")

    st.plotly_chart(eigenvalue_figure(report), use_container_width=True)
    with st.expander("Report record", expanded=False):
        st.code(report.to_text(), language="ini")
