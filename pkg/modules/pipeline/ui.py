# modules/pipeline/ui.py

from __future__ import annotations

import json

import streamlit as st

from modules.pipeline.report import report_to_frame, validate_report
from utils.errors import parse_error


def show_error(err: Exception, context: str | None = None) -> None:
    info = parse_error(err)
    prefix = f"{context}: " if context else ""
    st.error(f"❌ {prefix}{info['title']}: {info['message']}")
    if info.get("suggestion"):
        st.caption(f"💡 {info['suggestion']}")


def render_report(doc: dict) -> None:
    t = doc["totals"]
    col1, col2, col3, col4 = st.columns(4)
    with col1:
        st.metric("Camadas", t["layers"])
    with col2:
        st.metric("Esparsidade global", f"{t['sparsity']:.4f}")
    with col3:
        st.metric("Perda (só zerar)", f"{t['loss_before']:.4g}")
    with col4:
        st.metric("Perda final", f"{t['loss_after']:.4g}")

    if doc.get("config"):
        with st.expander("⚙️ Configuração da poda"):
            st.json(doc["config"])

    st.subheader("📄 Resultado por camada")
    df = report_to_frame(doc)
    if df.empty:
        st.info("Relatório sem camadas.")
        return
    st.dataframe(df, use_container_width=True)
    st.download_button(
        "📥 Baixar CSV",
        data=df.to_csv(index=False).encode("utf-8"),
        file_name="report.csv",
        mime="text/csv",
    )


def render_ui(default_path: str | None = None) -> None:
    """Carrega um relatório (upload ou caminho local) e mostra totais e tabela."""
    uploaded = st.file_uploader("📤 Enviar relatório (.json)", type=["json"])
    path = st.text_input("…ou caminho local do relatório", value=default_path or "")
    try:
        if uploaded is not None:
            doc = json.loads(uploaded.getvalue().decode("utf-8"))
        elif path:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        else:
            st.info("Informe um relatório gerado por `thanos prune`.")
            return
        validate_report(doc)
    except Exception as e:
        show_error(e, context="Relatório")
        return
    render_report(doc)
