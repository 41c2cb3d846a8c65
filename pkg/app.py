import base64

import streamlit as st
from streamlit_option_menu import option_menu

from views import home, report, settings, simulate, spectrum, verify
from views.helpers import initialize_settings

# (key, menu label, bootstrap icon, view module)
PAGES = [
    ("home", "Home", "house", home),
    ("settings", "Scenario", "gear", settings),
    ("simulate", "Simulate", "play-circle", simulate),
    ("spectrum", "Spectrum", "bar-chart-line", spectrum),
    ("verify", "Verify", "check2-circle", verify),
    ("report", "Report", "file-earmark-pdf", report),
]
VIEWS = {key: module for key, _, _, module in PAGES}

# Classes emitted by the views through unsafe_allow_html
STYLES = """
<style>
.page-title {font-size: 1.9rem; font-weight: 600; color: #263238; margin: 0.5rem 0 1.2rem 0;}
.section-subheader {font-size: 1.15rem; font-weight: 600; color: #263238; margin: 0.8rem 0;}
.welcome-banner {border-left: 4px solid #1565C0; background: #eef5fc; padding: 0.9rem 1.3rem; margin-bottom: 1.2rem;}
.workflow-step {border: 1px solid #dde3e8; border-radius: 6px; padding: 1rem; min-height: 170px;}
.step-number {display: inline-block; width: 24px; line-height: 24px; border-radius: 50%;
              text-align: center; background: #1565C0; color: #fff; font-weight: 600;}
.step-description {font-size: 0.85rem; color: #546E7A;}
.verdict-pass {color: #2E7D32; font-weight: 600;}
.verdict-fail {color: #AD1457; font-weight: 600;}
.sidebar-logo {display: block; width: 110px; margin: 0.4rem auto 0.8rem auto;}
.flowlab-footer {text-align: center; color: #90A4AE; font-size: 0.8rem; margin-top: 2rem;}
</style>
"""

LOGO_SVG = '''<svg viewBox="0 0 120 80" xmlns="http://www.w3.org/2000/svg">
  <g transform="translate(40, 40)" fill="none" stroke-linecap="round">
    <path d="M-30,0 C-30,-24 -8,-14 0,-26 C12,-34 30,-16 28,0 C26,20 10,30 -4,26 C-20,22 -30,14 -30,0 Z"
          stroke="#90CAF9" stroke-width="2.5" />
    <path d="M-20,0 C-20,-15 -6,-12 0,-18 C10,-22 20,-10 19,0 C18,12 8,19 -2,18 C-12,16 -20,9 -20,0 Z"
          stroke="#1976D2" stroke-width="2.5" />
    <circle cx="0" cy="0" r="9" stroke="#0D47A1" stroke-width="3" />
  </g>
  <text x="78" y="46" font-family="Arial, sans-serif" font-weight="bold" font-size="16"
        text-anchor="middle" fill="#1976D2">Rc</text>
</svg>'''


def logo_data_uri() -> str:
    return "data:image/svg+xml;base64," + base64.b64encode(LOGO_SVG.encode("utf-8")).decode("ascii")


def render_app():
    st.session_state.setdefault("current_view", "home")
    initialize_settings()
    keys = [key for key, *_ in PAGES]

    with st.sidebar:
        st.markdown(f'<img src="{logo_data_uri()}" alt="flowlab" class="sidebar-logo">', unsafe_allow_html=True)
        current = keys.index(st.session_state["current_view"]) if st.session_state["current_view"] in keys else 0
        label = option_menu(
            menu_title="flowlab",
            options=[page[1] for page in PAGES],
            icons=[page[2] for page in PAGES],
            default_index=current,
            styles={"nav-link-selected": {"background-color": "#1565C0"}},
        )
        selected = next(key for key, name, *_ in PAGES if name == label)
        if selected != st.session_state["current_view"]:
            st.session_state["current_view"] = selected
            st.rerun()

    VIEWS[st.session_state["current_view"]].render()
    st.markdown("<div class='flowlab-footer'>flowlab: a numerical lab for extended Ricci flows</div>",
                unsafe_allow_html=True)


st.set_page_config(page_title="flowlab", layout="wide", initial_sidebar_state="expanded")
st.markdown(STYLES, unsafe_allow_html=True)
render_app()
