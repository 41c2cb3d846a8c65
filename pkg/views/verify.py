import os

import streamlit as st

from flowlab.errors import FlowLabError
from flowlab.outputs import RunDirectory
from flowlab.verify import SUITES, run_suite
from views.helpers import page_title


def render():
    page_title("✅ Verify")
    settings = st.session_state.settings

    col1, col2 = st.columns([2, 1])
    suite = col1.selectbox("Suite", SUITES + ("all",), index=len(SUITES))
    seed = col2.number_input("Seed", min_value=0, value=int(settings["verify_seed"]))

    if st.button("Run checks", type="primary"):
        with st.spinner(f"Running {suite}..."):
            try:
                report = run_suite(suite, seed=int(seed), settings=settings)
                out = RunDirectory(os.path.join(settings["output_dir"], "verify"))
                out.write_json("verify.json", report.to_json())
                out.write_frame("verify.csv", report.to_frame())
                out.write_manifest(None, "verify", seed=int(seed), extra={"suite": suite, "passed": report.passed})
                st.session_state["last_verify"] = report
            except FlowLabError as e:
                st.error(f"Error running suite: {str(e)}")

    report = st.session_state.get("last_verify")
    if report is None:
        return

    df = report.to_frame()
    col1, col2, col3 = st.columns(3)
    col1.metric("Checks", len(df))
    col2.metric("Passed", int(df["passed"].sum()))
    col3.metric("Failed", len(report.failures))
    if report.passed:
        st.markdown('<span class="verdict-pass">All checks passed.</span>', unsafe_allow_html=True)
    else:
        st.markdown('<span class="verdict-fail">Some checks failed.</span>', unsafe_allow_html=True)

    st.dataframe(
        df.style.format({"value": "{:.3e}", "tol": "{:.1e}"}).map(
            lambda v: "color: #2E7D32" if v is True else ("color: #AD1457" if v is False else ""),
            subset=["passed"],
        ),
        use_container_width=True,
        hide_index=True,
    )
    st.download_button(
        label="📥 Download verify CSV",
        data=df.to_csv(index=False).encode("utf-8"),
        file_name="verify.csv",
        mime="text/csv",
    )
