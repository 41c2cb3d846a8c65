"""PDF lab report and ZIP bundle for a run directory."""
from __future__ import annotations

import logging
import zipfile
from datetime import datetime
from io import BytesIO
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402
from fpdf import FPDF  # noqa: E402
from fpdf.enums import XPos, YPos  # noqa: E402

from flowlab.errors import ConfigError  # noqa: E402
from flowlab.outputs import load_run_tables, read_manifest  # noqa: E402

logger = logging.getLogger(__name__)

FIGURE_DIR = "figures"
REPORT_NAME = "lab_report.pdf"
BUNDLE_NAME = "lab_bundle.zip"


def _latin1(text: str) -> str:
    """The core PDF fonts only cover latin-1."""
    return str(text).encode("latin-1", "replace").decode("latin-1")


# --------------------------------------------------------------------------- figures

def plot_trajectory(df: pd.DataFrame, path: Path) -> Path | None:
    columns = [c for c in df.columns if c not in ("time", "checksum") and pd.api.types.is_numeric_dtype(df[c])]
    if not columns:
        return None
    fig, axes = plt.subplots(len(columns), 1, figsize=(10, 2.2 * len(columns)), sharex=True, squeeze=False)
    for ax, column in zip(axes[:, 0], columns):
        ax.plot(df["time"], df[column], color="#1976D2")
        ax.set_ylabel(column, fontsize=8)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("t")
    fig.suptitle("Recorded monitor values")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_monitor(name: str, df: pd.DataFrame, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.fill_between(df["t"], df["lower_env"] - df["margin"], df["upper_env"] + df["margin"],
                    color="#4CAF50", alpha=0.15, label="envelope + margin")
    ax.plot(df["t"], df["upper_env"], color="#2E7D32", lw=1, label="upper envelope")
    ax.plot(df["t"], df["observed_max"], color="#AD1457", label="observed max")
    ax.plot(df["t"], df["observed_min"], color="#1976D2", label="observed min")
    violated = df[df["violated"].astype(bool)]
    if not violated.empty:
        ax.scatter(violated["t"], violated["observed_max"], color="red", zorder=3, label="violation")
    ax.set_title(f"Bound monitor: {name}")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_spectrum(df: pd.DataFrame, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.stem(df["index"], df["eigenvalue"])
    ax.axhline(0.0, color="#444", lw=1)
    ax.set_title("Top eigenvalues of the linearized operator")
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def build_figures(run_dir: str | Path) -> list[tuple[str, Path]]:
    run_dir = Path(run_dir)
    tables = load_run_tables(run_dir)
    fig_dir = run_dir / FIGURE_DIR
    fig_dir.mkdir(exist_ok=True)
    figures: list[tuple[str, Path]] = []
    if "trajectory" in tables:
        path = plot_trajectory(tables["trajectory"], fig_dir / "trajectory.png")
        if path is not None:
            figures.append(("Monitor values along the run", path))
    for stem, df in tables.items():
        if stem.startswith("monitor_"):
            name = stem[len("monitor_"):]
            figures.append((f"Bound monitor {name}", plot_monitor(name, df, fig_dir / f"{stem}.png")))
    if "spectrum" in tables:
        figures.append(("Spectrum", plot_spectrum(tables["spectrum"], fig_dir / "spectrum.png")))
    logger.info("drew %d figures in %s", len(figures), fig_dir)
    return figures


# --------------------------------------------------------------------------- PDF

class LabReportPDF(FPDF):
    def header(self):
        pass

    def footer(self):
        if self.page_no() == 1:
            return
        self.set_y(-15)
        self.set_font("Helvetica", "", 8)
        self.set_text_color(100)
        self.cell(0, 10, f"Generated by flowlab - Page {self.page_no()}", align="C")

    def line_out(self, text: str, h: float = 8, style: str = "", size: int = 11):
        self.set_font("Helvetica", style, size)
        self.cell(0, h, _latin1(text), new_x=XPos.LMARGIN, new_y=YPos.NEXT)

    def add_cover(self, manifest: dict):
        self.add_page()
        self.set_font("Helvetica", "B", 20)
        self.cell(0, 80, "flowlab lab report", new_x=XPos.LMARGIN, new_y=YPos.NEXT, align="C")
        self.set_font("Helvetica", "", 13)
        for text in (f"Scenario: {manifest.get('scenario') or '-'} ({manifest.get('system') or '-'})",
                     f"Command: {manifest.get('command', '-')}",
                     f"Generated on: {datetime.now().strftime('%Y-%m-%d')}"):
            self.cell(0, 10, _latin1(text), new_x=XPos.LMARGIN, new_y=YPos.NEXT, align="C")

    def add_manifest(self, manifest: dict):
        self.add_page()
        self.line_out("Run manifest", h=10, style="B", size=14)
        for key in ("scenario_hash", "seed", "created"):
            self.line_out(f"{key}: {manifest.get(key)}")
        versions = manifest.get("versions", {})
        self.line_out("versions: " + ", ".join(f"{k} {v}" for k, v in sorted(versions.items())))
        self.line_out(f"files: {len(manifest.get('files', []))}")

    def add_spectrum_record(self, text: str):
        self.ln(4)
        self.line_out("Spectrum record", h=10, style="B", size=14)
        self.set_font("Courier", "", 9)
        self.multi_cell(0, 5, _latin1(text))

    def add_monitor_summary(self, name: str, df: pd.DataFrame):
        violations = int(df["violated"].astype(bool).sum())
        status = "held" if violations == 0 else f"{violations} violations"
        self.line_out(f"Monitor {name}: {status} over {len(df)} samples")

    def add_verify_table(self, df: pd.DataFrame):
        self.ln(4)
        self.line_out("Verification checks", h=10, style="B", size=14)
        widths = (30, 55, 35, 30, 20)
        self.set_font("Helvetica", "B", 9)
        for w, title in zip(widths, ("suite", "check", "value", "tol", "result")):
            self.cell(w, 7, title, border=1)
        self.ln()
        self.set_font("Helvetica", "", 9)
        for row in df.itertuples(index=False):
            cells = (row.suite, row.name, f"{row.value:.3e}", f"{row.tol:.1e}",
                     "pass" if bool(row.passed) else "FAIL")
            for w, text in zip(widths, cells):
                self.cell(w, 6, _latin1(text), border=1)
            self.ln()

    def add_visual(self, title: str, image_path: Path):
        self.add_page()
        self.line_out(title, h=10, style="B", size=12)
        self.image(str(image_path), x=10, w=self.w - 20)


def generate_lab_report(run_dir: str | Path, pdf_path: str | Path | None = None) -> Path:
    """Render manifest, monitor summaries, spectrum, verify table and figures of a run into one PDF."""
    run_dir = Path(run_dir)
    if not (run_dir / "manifest.json").exists():
        raise ConfigError("report.run_dir", f"{run_dir} has no manifest.json; not a run directory")
    manifest = read_manifest(run_dir)
    tables = load_run_tables(run_dir)
    figures = build_figures(run_dir)

    pdf = LabReportPDF()
    pdf.set_auto_page_break(auto=True, margin=15)
    pdf.add_cover(manifest)
    pdf.add_manifest(manifest)
    for stem, df in tables.items():
        if stem.startswith("monitor_"):
            pdf.add_monitor_summary(stem[len("monitor_"):], df)
    spectrum_txt = run_dir / "spectrum.txt"
    if spectrum_txt.exists():
        pdf.add_spectrum_record(spectrum_txt.read_text())
    if "verify" in tables:
        pdf.add_verify_table(tables["verify"])
    for title, path in figures:
        pdf.add_visual(title, path)

    pdf_path = Path(pdf_path) if pdf_path is not None else run_dir / REPORT_NAME
    pdf.output(str(pdf_path))
    logger.info("wrote lab report %s", pdf_path)
    return pdf_path


def bundle_bytes(run_dir: str | Path, pdf_path: str | Path) -> BytesIO:
    """ZIP of the PDF, every CSV and every figure of a run directory."""
    run_dir = Path(run_dir)
    pdf_path = Path(pdf_path)
    zip_buffer = BytesIO()
    with zipfile.ZipFile(zip_buffer, "w", zipfile.ZIP_DEFLATED) as zipf:
        zipf.write(pdf_path, arcname=pdf_path.name)
        for name in ["manifest.json", "spectrum.txt", "verify.json"]:
            if (run_dir / name).exists():
                zipf.write(run_dir / name, arcname=name)
        for csv in sorted(run_dir.glob("*.csv")):
            zipf.write(csv, arcname=csv.name)
        for png in sorted((run_dir / FIGURE_DIR).glob("*.png")):
            zipf.write(png, arcname=f"{FIGURE_DIR}/{png.name}")
    zip_buffer.seek(0)
    return zip_buffer


def write_bundle(run_dir: str | Path, pdf_path: str | Path, zip_path: str | Path | None = None) -> Path:
    zip_path = Path(zip_path) if zip_path is not None else Path(run_dir) / BUNDLE_NAME
    zip_path.write_bytes(bundle_bytes(run_dir, pdf_path).getvalue())
    logger.info("wrote bundle %s", zip_path)
    return zip_path
