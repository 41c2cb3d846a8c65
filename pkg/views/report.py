import os
from datetime import datetime

import streamlit as st

from flowlab.errors import FlowLabError
from flowlab.report import bundle_bytes, generate_lab_report
from views.helpers import current_scenario, load_run, page_title


def render():
    page_title("📄 Lab Report")
    cfg = current_scenario()
    default_dir = cfg.output if cfg is not None else ""
    run_dir = st.text_input("Run directory", value=default_dir,
                            help="any directory written by simulate, spectrum or verify")

    run = load_run(run_dir) if run_dir else None
    if run is None:
        st.warning("No manifest.json in this directory yet. Run a simulation, spectrum or verify first.")
        return

    manifest = run["manifest"]
    col1, col2, col3 = st.columns(3)
    col1.metric("Command", manifest.get("command", "-"))
    col2.metric("Scenario", manifest.get("scenario") or "-")
    col3.metric("Files", len(manifest.get("files", [])))

    timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    pdf_filename = f"flowlab_report_{timestamp}.pdf"
    zip_filename = f"flowlab_bundle_{timestamp}.zip"

    if st.button("Build report", type="primary"):
        with st.spinner("Drawing figures and rendering the PDF..."):
            try:
                pdf_path = generate_lab_report(run_dir)
                st.session_state["last_report"] = (run_dir, str(pdf_path))
            except FlowLabError as e:
                st.error(f"Error building report: {str(e)}")
            except Exception as e:
                st.error(f"Error rendering PDF: {str(e)}")

    last = st.session_state.get("last_report")
    if last is None or last[0] != run_dir or not os.path.exists(last[1]):
        return

    col1, col2 = st.columns(2)
    with col1:
        with open(last[1], "rb") as f:
            st.download_button(
                label="📄 Download PDF Report",
                data=f.read(),
                file_name=pdf_filename,
                mime="application/pdf",
            )
    with col2:
        st.download_button(
            label="📦 Download Full ZIP Report",
            data=bundle_bytes(run_dir, last[1]),
            file_name=zip_filename,
            mime="application/zip",
        )
