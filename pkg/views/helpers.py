import os
from io import BytesIO

import pandas as pd
import streamlit as st

from flowlab.errors import ConfigError
from flowlab.outputs import load_run_tables, read_manifest
from flowlab.scenario import DEFAULT_SETTINGS, ScenarioConfig, default_scenario, load_settings, parse_scenario

SCENARIO_DIR = "config/scenarios"


def initialize_settings():
    """Initialize settings from config file and a default scenario."""
    if 'settings' not in st.session_state:
        try:
            st.session_state.settings = load_settings()
        except Exception as e:
            st.error(f"Error loading settings: {str(e)}")
            st.session_state.settings = dict(DEFAULT_SETTINGS)
    if 'scenario_text' not in st.session_state:
        st.session_state.scenario_text = default_scenario(st.session_state.settings).dump()


def current_scenario() -> ScenarioConfig | None:
    """The scenario being edited, or None after reporting why it does not parse."""
    try:
        return parse_scenario(st.session_state.scenario_text, st.session_state.settings)
    except ConfigError as e:
        st.error(f"Scenario error {e}")
        return None


def preset_files() -> list[str]:
    if not os.path.isdir(SCENARIO_DIR):
        return []
    return sorted(f for f in os.listdir(SCENARIO_DIR) if f.endswith(".ini"))


def page_title(text: str):
    st.markdown(f'<div class="page-title">{text}</div>', unsafe_allow_html=True)


@st.cache_data(ttl=7200)
def load_run(run_dir: str):
    """Manifest and tables of a run directory."""
    try:
        if not os.path.exists(os.path.join(run_dir, "manifest.json")):
            return None
        return {"manifest": read_manifest(run_dir), "tables": load_run_tables(run_dir)}
    except Exception as e:
        st.error(f"Error loading run directory: {str(e)}")
        return None


def to_excel_bytes(frames: dict[str, pd.DataFrame]) -> bytes:
    """One sheet per table."""
    buffer = BytesIO()
    with pd.ExcelWriter(buffer, engine="openpyxl") as writer:
        for name, df in frames.items():
            df.to_excel(writer, sheet_name=name[:31], index=False)
    return buffer.getvalue()
