import streamlit as st
import sys
import os

# 项目根目录加入 Python 路径 (config 与 src 包)
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, project_root)

import json
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from PIL import Image

from config import CONSTANTS
from src.core.data_processor import load_manifest, load_pair
from src.core.errors import Pix2NextError
from src.core.visualizer import Visualizer
from src.tasks.translator import Translator
from src.utils.checkpoint_utils import list_checkpoints
from src.utils.config_utils import load_config
from src.utils.data_utils import load_image, to_uint8
from src.utils.visualization_utils import create_plot


def initialize_session_state():
    default_states = {
        'run_dir': 'runs/toy',
        'data_root': 'data/toy',
        'report_dir': '',
        'manifest': None,
        'translator': None,
        'translator_checkpoint': None,
    }
    for key, value in default_states.items():
        if key not in st.session_state:
            st.session_state[key] = value


def main():
    st.set_page_config(
        page_title="RGB → 近红外图像翻译",
        page_icon="🌗",
        layout="wide",
        initial_sidebar_state="expanded"
    )

    st.markdown("""
    <style>
    .main-header {
        font-size: 2.6rem;
        background: linear-gradient(135deg, #434343 0%, #c31432 100%);
        -webkit-background-clip: text;
        -webkit-text-fill-color: transparent;
        text-align: center;
        margin-bottom: 1rem;
        font-weight: bold;
        padding: 1rem;
    }
    </style>
    """, unsafe_allow_html=True)

    st.markdown('<div class="main-header">🌗 RGB → NIR/LWIR 图像翻译</div>', unsafe_allow_html=True)

    initialize_session_state()

    pages = {
        "项目概览": show_project_overview,
        "数据集": show_dataset,
        "训练监控": show_training_monitor,
        "评估报告": show_evaluation_report,
        "图像翻译": show_translation,
    }

    selected_page = st.sidebar.selectbox("选择页面", list(pages.keys()))
    st.session_state.run_dir = st.sidebar.text_input("训练输出目录", st.session_state.run_dir)
    pages[selected_page]()


def show_project_overview():
    st.header("🎯 项目概览")

    col1, col2 = st.columns([2, 1])
    with col1:
        st.markdown("""
        ### 系统功能概述
        - **数据集**: 成对 RGB / 目标波段图像的发现、划分与预览
        - **训练**: 编码器-瓶颈-解码器生成器 + 三尺度 PatchGAN 判别器
        - **翻译**: 从检查点生成 8 位单通道图像
        - **评估**: PSNR、SSIM、RMSE、STD、FID、LPIPS、DISTS

        命令行入口: `python -m src.cli {synth|train|translate|evaluate|fetch-weights}`
        """)

    with col2:
        run_dir = Path(st.session_state.run_dir)
        config = load_config(str(run_dir / 'config.toml'))
        checkpoints = list_checkpoints(run_dir)
        st.metric("检查点数量", len(checkpoints))
        st.metric("注意力位置", config.get('train', {}).get('attention', '—'))
        st.metric("特征提取器", config.get('extractor', {}).get('backbone', '—'))
        st.metric("目标波段", config.get('data', {}).get('modality', '—'))

    if config:
        st.subheader("当前运行配置")
        st.json(config)


def show_dataset():
    st.header("📁 数据集")

    st.session_state.data_root = st.text_input("数据根目录", st.session_state.data_root)
    modality = st.selectbox("目标波段", list(CONSTANTS['TARGET_SUBDIRS']))

    if st.button("加载数据集", type="primary"):
        try:
            st.session_state.manifest = load_manifest(st.session_state.data_root, modality=modality)
        except Pix2NextError as e:
            st.error(f"数据集加载失败: {e}")
            return

    manifest = st.session_state.manifest
    if manifest is None:
        st.info("请输入数据根目录并加载")
        return

    summary = manifest.summary()
    cols = st.columns(4)
    cols[0].metric("成对样本", summary['pairs'])
    cols[1].metric("训练集", summary['train'])
    cols[2].metric("测试集", summary['test'])
    cols[3].metric("未匹配文件", summary['unmatched'])

    st.dataframe(pd.DataFrame([entry.__dict__ for entry in manifest.entries]))

    pair_id = st.selectbox("预览样本", manifest.ids)
    entry = next(entry for entry in manifest.entries if entry.id == pair_id)
    pair = load_pair(entry, tuple(manifest.resolution))
    col1, col2 = st.columns(2)
    col1.image(to_uint8(pair.rgb), caption=f"{pair_id} RGB")
    col2.image(to_uint8(pair.target[:, :, 0]), caption=f"{pair_id} {manifest.modality}")


def show_training_monitor():
    st.header("📈 训练监控")

    log_file = Path(st.session_state.run_dir) / 'train_log.jsonl'
    if not log_file.exists():
        st.warning(f"未找到训练日志: {log_file}")
        return

    log_df = pd.read_json(log_file, lines=True)
    if log_df.empty:
        st.info("训练日志为空")
        return

    visualizer = Visualizer()
    last = log_df.iloc[-1]
    cols = st.columns(4)
    cols[0].metric("当前步数", int(last['step']))
    cols[1].metric("L_total", f"{last['L_total']:.4f}")
    cols[2].metric("L_SSIM", f"{last['L_SSIM']:.4f}")
    cols[3].metric("生成器学习率", f"{last['lr_G']:.2e}")

    st.plotly_chart(visualizer.create_loss_curves(log_df), use_container_width=True)
    st.plotly_chart(visualizer.create_lr_curve(log_df), use_container_width=True)

    samples = sorted((Path(st.session_state.run_dir) / 'samples').glob('*.png'))
    if samples:
        st.subheader("检查点样例 (RGB | 生成 | 目标)")
        chosen = st.select_slider("检查点", options=[path.stem for path in samples], value=samples[-1].stem)
        st.image(str(next(path for path in samples if path.stem == chosen)))


def show_evaluation_report():
    st.header("📊 评估报告")

    st.session_state.report_dir = st.text_input("报告目录 (含 report.csv / report.json)", st.session_state.report_dir)
    report_dir = Path(st.session_state.report_dir)
    csv_path, json_path = report_dir / 'report.csv', report_dir / 'report.json'
    if not st.session_state.report_dir or not csv_path.exists():
        st.info("请先运行 `python -m src.cli evaluate` 并填写报告目录")
        return

    rows = pd.read_csv(csv_path)
    summary = json.loads(json_path.read_text(encoding='utf-8')) if json_path.exists() else {}

    if summary:
        table = []
        for metric, stats in summary['aggregates'].items():
            arrow = '↑' if CONSTANTS['METRIC_DIRECTIONS'][metric] == 'higher-better' else '↓'
            table.append({'指标': f"{metric.upper()} {arrow}", '均值': stats['mean'], '标准差': stats['std']})
        fid = summary['corpus'].get('fid')
        table.append({'指标': 'FID ↓', '均值': fid, '标准差': None})
        st.subheader(f"汇总 (特征后端: {summary.get('backend')})")
        st.dataframe(pd.DataFrame(table))
        if summary.get('skipped'):
            st.warning(f"已跳过: {', '.join(summary['skipped'])}")

    st.subheader("逐图指标")
    st.dataframe(rows)

    numeric = [m for m in CONSTANTS['PAIRWISE_METRICS'] if rows[m].notna().any()]
    metric = st.selectbox("分布", numeric)
    finite = rows.replace([np.inf, -np.inf], np.nan)
    st.plotly_chart(create_plot(finite, 'box', y_col=metric, points='all', title=f"{metric.upper()} 分布"),
                    use_container_width=True)
    st.pyplot(Visualizer().create_metric_boxplot(rows))


def show_translation():
    st.header("🖼️ 图像翻译")

    checkpoints = list_checkpoints(st.session_state.run_dir)
    if not checkpoints:
        st.warning("当前输出目录下没有检查点")
        return

    checkpoint = st.selectbox("检查点", checkpoints, index=len(checkpoints) - 1, format_func=lambda p: p.name)
    uploaded_file = st.file_uploader("上传 RGB 图像", type=["png", "jpg", "jpeg"])
    if uploaded_file is None:
        return

    try:
        if st.session_state.translator_checkpoint != checkpoint:
            st.session_state.translator = Translator(checkpoint)
            st.session_state.translator_checkpoint = checkpoint
        with tempfile.NamedTemporaryFile(suffix=Path(uploaded_file.name).suffix) as tmp:
            tmp.write(uploaded_file.getvalue())
            tmp.flush()
            rgb = load_image(tmp.name)
        generated = st.session_state.translator.translate_array(rgb)
    except Pix2NextError as e:
        st.error(f"翻译失败: {e}")
        return

    col1, col2 = st.columns(2)
    col1.image(to_uint8(rgb if rgb.shape[2] == 3 else rgb[:, :, 0]), caption="输入 RGB")
    col2.image(to_uint8(generated[:, :, 0]), caption="生成结果")
    buffer = Image.fromarray(to_uint8(generated[:, :, 0]))
    with tempfile.NamedTemporaryFile(suffix='.png') as out:
        buffer.save(out.name)
        st.download_button("下载 PNG", data=Path(out.name).read_bytes(),
                           file_name=f"{Path(uploaded_file.name).stem}.png", mime="image/png")


if __name__ == "__main__":
    main()
