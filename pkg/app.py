# app.py

import os

import streamlit as st

from modules.pipeline.ui import render_ui
from utils.config import cfg

st.set_page_config(page_title="Thanos | relatórios de poda", page_icon="✂️", layout="wide")


def main():
    st.sidebar.title("Thanos")
    st.sidebar.caption("Poda de camadas lineares com dados de calibração.")
    st.title("✂️ Relatório de poda")
    path = cfg.report.path
    render_ui(default_path=path if os.path.exists(path) else None)


if __name__ == "__main__":
    main()
