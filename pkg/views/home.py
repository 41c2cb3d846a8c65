import os

import streamlit as st

from views.helpers import current_scenario, load_run, page_title


def _card(col, number: int, title: str, text: str, button: str, key: str, target: str):
    with col:
        st.markdown(f"""
        <div class="workflow-step">
            <div class="step-number">{number}</div>
            <h4>{title}</h4>
            <p class="step-description">{text}</p>
        </div>
        """, unsafe_allow_html=True)
        if st.button(button, key=key):
            st.session_state['current_view'] = target
            st.rerun()


def render():
    page_title("🏠 Lab Bench")

    st.markdown("""
    <div class="welcome-banner">
        <h2>flowlab</h2>
        <p>Harmonic-Ricci, warped-product, invariant and connection Ricci flows on periodic grids:
        integrate them, linearize them and check their estimates.</p>
    </div>
    """, unsafe_allow_html=True)

    col1, col2, col3, col4 = st.columns(4)
    _card(col1, 1, "Scenario", "Pick a preset or edit grid, initial data, flow constants and stepper.",
          "Edit Scenario", "go_to_settings", "settings")
    _card(col2, 2, "Simulate", "Run the flow with RK4, record monitors and check the bound envelopes.",
          "Run Flow", "go_to_simulate", "simulate")
    _card(col3, 3, "Spectrum", "Assemble a linearized block and read off kernel, gap and verdict.",
          "Open Spectrum", "go_to_spectrum", "spectrum")
    _card(col4, 4, "Verify & Report", "Run the identity batteries and export a PDF lab report.",
          "Verify", "go_to_verify", "verify")

    cfg = current_scenario()
    if cfg is not None and os.path.exists(os.path.join(cfg.output, "manifest.json")):
        st.markdown("---")
        st.markdown('<div class="section-subheader">📊 Last Run of the Current Scenario</div>',
                    unsafe_allow_html=True)
        run = load_run(cfg.output)
        if run is not None:
            manifest = run["manifest"]
            c1, c2, c3, c4 = st.columns(4)
            c1.metric("Command", manifest.get("command", "-"))
            c2.metric("Status", manifest.get("status", "-"))
            c3.metric("Records", manifest.get("records", "-"))
            c4.metric("Scenario hash", (manifest.get("scenario_hash") or "-")[:10],
                      help="sha256 of the canonical scenario text")

    st.markdown("---")
    st.markdown('<div class="section-subheader">💡 Notes</div>', unsafe_allow_html=True)
    tips_col1, tips_col2 = st.columns(2)
    with tips_col1:
        with st.expander("📘 Normalized or not", expanded=False):
            st.markdown("""
            - `s = auto` picks `s = -2λ`, the value at which the curvature-normalized fixed point is stationary
            - Bound monitors apply to the un-normalized warped flow only (`normalized = false`)
            - With `synth_K` set, the Ricci response uses the constant-curvature model around the flat reference
            """)
    with tips_col2:
        with st.expander("⚡ Step size", expanded=False):
            st.markdown("""
            - `dt = auto` splits `t_end` evenly below the explicit CFL limit `cfl·h²·min eig(g)/dim`
            - A run that loses positive-definiteness stops with a failure dump in its output directory
            """)
