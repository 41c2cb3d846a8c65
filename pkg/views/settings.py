import json
import os

import streamlit as st

from flowlab.errors import ConfigError
from flowlab.flows import GAUGES
from flowlab.scenario import PRESETS, SETTINGS_PATH, SYSTEMS, parse_scenario
from flowlab.stability import BLOCKS
from views.helpers import SCENARIO_DIR, current_scenario, page_title, preset_files


def _apply(cfg, section: str, **changes):
    try:
        st.session_state.scenario_text = cfg.with_values(section, **changes).dump()
    except ConfigError as e:
        st.error(f"Scenario error {e}")


def render_presets():
    st.markdown('<div class="section-subheader">📂 Presets</div>', unsafe_allow_html=True)
    files = preset_files()
    col1, col2 = st.columns([3, 1])
    with col1:
        choice = st.selectbox("Scenario preset", files, index=None, placeholder="Pick a preset file")
    with col2:
        st.write("")
        if st.button("Load preset", use_container_width=True, disabled=choice is None):
            with open(os.path.join(SCENARIO_DIR, choice), "r") as f:
                text = f.read()
            try:
                st.session_state.scenario_text = parse_scenario(text, st.session_state.settings).dump()
                st.success(f"✅ Loaded {choice}")
            except ConfigError as e:
                st.error(f"Error in preset {choice}: {e}")

    uploaded = st.file_uploader("…or upload a scenario file", type=["ini", "txt"])
    if uploaded is not None:
        try:
            text = uploaded.getvalue().decode("utf-8")
            st.session_state.scenario_text = parse_scenario(text, st.session_state.settings).dump()
            st.success(f"✅ Loaded {uploaded.name}")
        except (ConfigError, UnicodeDecodeError) as e:
            st.error(f"Error reading {uploaded.name}: {str(e)}")


def render_form(cfg):
    st.markdown('<div class="section-subheader">🧭 Scenario</div>', unsafe_allow_html=True)
    with st.expander("System and grid", expanded=True):
        col1, col2, col3, col4 = st.columns(4)
        system = col1.selectbox("System", SYSTEMS, index=SYSTEMS.index(cfg.system))
        dim = col2.selectbox("Dimension", (1, 2, 3), index=cfg["grid"]["dim"] - 1)
        points = col3.number_input("Points per axis", min_value=8, max_value=256, value=cfg["grid"]["points"])
        seed = col4.number_input("Seed", min_value=0, value=cfg.seed)
        if (system, dim, points, seed) != (cfg.system, cfg["grid"]["dim"], cfg["grid"]["points"], cfg.seed):
            _apply(cfg, "scenario", system=system, seed=int(seed))
            cfg = current_scenario() or cfg
            _apply(cfg, "grid", dim=int(dim), points=int(points))
            st.rerun()

    with st.expander("Initial data", expanded=False):
        ini = cfg["initial"]
        col1, col2, col3 = st.columns(3)
        preset = col1.selectbox("Preset", PRESETS, index=PRESETS.index(ini["preset"]))
        amplitude = col2.number_input("Amplitude", value=ini["amplitude"], format="%.4f")
        metric_amplitude = col3.number_input("Metric amplitude", min_value=0.0, max_value=0.9,
                                             value=ini["metric_amplitude"], format="%.4f",
                                             help="conformal factor 1 + a·cos(x)")
        if (preset, amplitude, metric_amplitude) != (ini["preset"], ini["amplitude"], ini["metric_amplitude"]):
            _apply(cfg, "initial", preset=preset, amplitude=float(amplitude),
                   metric_amplitude=float(metric_amplitude))
            st.rerun()

    with st.expander("Flow and stepper", expanded=False):
        flow, stepper = cfg["flow"], cfg["stepper"]
        col1, col2, col3, col4 = st.columns(4)
        gauge = col1.selectbox("Gauge", GAUGES, index=GAUGES.index(flow["gauge"]))
        normalized = col2.checkbox("Normalized", value=flow["normalized"])
        synth = col3.text_input("Synthetic K", value=str(flow["synth_K"]), help="a number, or none")
        t_end = col4.number_input("t_end", min_value=0.0, value=stepper["t_end"], format="%.4f")
        if (gauge, normalized, synth, t_end) != (flow["gauge"], flow["normalized"], str(flow["synth_K"]),
                                                 stepper["t_end"]):
            try:
                synth_value = "none" if synth.strip().lower() == "none" else float(synth)
            except ValueError:
                st.error(f"Synthetic K must be a number or none, got {synth!r}")
                return
            _apply(cfg, "flow", gauge=gauge, normalized=normalized, synth_K=synth_value)
            cfg = current_scenario() or cfg
            _apply(cfg, "stepper", t_end=float(t_end))
            st.rerun()

    with st.expander("Spectrum", expanded=False):
        spec = cfg["spectrum"]
        col1, col2, col3 = st.columns(3)
        block = col1.selectbox("Block", BLOCKS, index=BLOCKS.index(spec["block"]))
        k = col2.number_input("Eigenvalues", min_value=1, max_value=50, value=spec["k"])
        trace_free = col3.checkbox("Trace-free fiber block", value=spec["trace_free"])
        if (block, k, trace_free) != (spec["block"], spec["k"], spec["trace_free"]):
            _apply(cfg, "spectrum", block=block, k=int(k), trace_free=trace_free)
            st.rerun()


def render_text_editor(cfg):
    st.markdown('<div class="section-subheader">📝 Scenario Text</div>', unsafe_allow_html=True)
    text = st.text_area("Canonical scenario", value=st.session_state.scenario_text, height=360)
    col1, col2 = st.columns(2)
    with col1:
        if st.button("Apply text", use_container_width=True):
            try:
                st.session_state.scenario_text = parse_scenario(text, st.session_state.settings).dump()
                st.success("✅ Scenario updated")
            except ConfigError as e:
                st.error(f"Scenario error {e}")
    with col2:
        st.download_button(
            label="📥 Download scenario",
            data=st.session_state.scenario_text.encode("utf-8"),
            file_name=f"{cfg.name}.ini",
            mime="text/plain",
            use_container_width=True,
        )


def render_lab_defaults():
    st.markdown('<div class="section-subheader">⚙️ Lab Defaults</div>', unsafe_allow_html=True)
    settings = dict(st.session_state.settings)
    with st.expander("config.json", expanded=False):
        col1, col2, col3 = st.columns(3)
        settings["cfl"] = col1.number_input("CFL factor", min_value=0.01, max_value=1.0,
                                            value=float(settings["cfl"]), format="%.3f")
        settings["monitor_margin"] = col2.number_input("Monitor margin", min_value=0.0,
                                                       value=float(settings["monitor_margin"]), format="%.1e")
        settings["dense_limit"] = col3.number_input("Dense-solve DOF limit", min_value=100,
                                                    value=int(settings["dense_limit"]))
        col1, col2, col3 = st.columns(3)
        settings["record_every"] = col1.number_input("Record every", min_value=1,
                                                     value=int(settings["record_every"]))
        settings["verify_seed"] = col2.number_input("Verify seed", min_value=0, value=int(settings["verify_seed"]))
        settings["spectrum_k"] = col3.number_input("Eigenvalues", min_value=1, value=int(settings["spectrum_k"]))

        if st.button("💾 Save Configuration", type="primary", key="save_config", use_container_width=True):
            try:
                with open(SETTINGS_PATH, "w") as f:
                    json.dump(settings, f, indent=4)
                st.session_state.settings = settings
                st.success("✅ Configuration saved. New scenarios pick up these defaults.")
            except OSError as e:
                st.error(f"Error saving configuration: {str(e)}")


def render():
    page_title("⚙️ Scenario")
    cfg = current_scenario()
    render_presets()
    if cfg is None:
        st.warning("The current scenario does not parse; fix it in the text editor below.")
        text = st.text_area("Scenario text", value=st.session_state.scenario_text, height=360)
        if st.button("Apply text"):
            st.session_state.scenario_text = text
            st.rerun()
        return

    render_form(cfg)
    render_text_editor(cfg)
    render_lab_defaults()

    if st.button("Continue to Simulate →", key="continue_to_simulate", use_container_width=True):
        st.session_state['current_view'] = 'simulate'
        st.rerun()
