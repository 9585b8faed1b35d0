# Arquivo: modules/exporters.py

import base64
import json
import logging
import os
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from openpyxl.styles import Alignment, Border, Font, PatternFill, Side
from openpyxl.utils import get_column_letter

from modules.evaluation import MetricError, MetricReport
from modules.extractors import CASES_FORMAT, CATALOG_FORMAT
from modules.manifest import RunManifest
from modules.models import ScorerCheckpoint
from modules.processors import Catalog, DatasetStats, SplitDataset
from style_config import (
    BORDER_CONFIGS, BORDER_STYLES, COLUMN_WIDTHS, COUNT_NUMBER_FORMAT,
    METRIC_DECIMALS, METRIC_NUMBER_FORMAT, THEMES,
)
from utils.helpers import ensure_dir, format_improvement, format_metric

TABLE_FORMAT = "recency-table"
METRIC_COLUMN = "Métrica"


def write_json(data: dict, path: str, encoding: str = "utf-8") -> str:
    """Grava JSON com chaves ordenadas (mesmo conteúdo -> mesmos bytes)."""
    ensure_dir(os.path.dirname(path))
    with open(path, "w", encoding=encoding, newline="\n") as handle:
        json.dump(data, handle, sort_keys=True, indent=2, ensure_ascii=False)
        handle.write("\n")
    return path


def _write_tsv(frame: pd.DataFrame, path: str, fmt: str, encoding: str) -> str:
    ensure_dir(os.path.dirname(path))
    with open(path, "w", encoding=encoding, newline="\n") as handle:
        handle.write(f"#{fmt} v1\n")
        frame.to_csv(handle, sep="\t", index=False, lineterminator="\n")
    return path


def write_cases(cases: Sequence, path: str, encoding: str = "utf-8") -> str:
    frame = pd.DataFrame({
        "case_id": [c.case_id for c in cases],
        "prefix": [",".join(map(str, c.prefix)) for c in cases],
        "gt": [c.gt for c in cases],
        "last": [c.last for c in cases],
    }, columns=["case_id", "prefix", "gt", "last"])
    return _write_tsv(frame, path, CASES_FORMAT, encoding)


def write_catalog(catalog: Catalog, path: str, encoding: str = "utf-8") -> str:
    frame = pd.concat([
        pd.DataFrame({"kind": "item", "index": range(catalog.n_items), "external_id": catalog.item_ids}),
        pd.DataFrame({"kind": "user", "index": range(catalog.n_users), "external_id": catalog.user_ids}),
    ], ignore_index=True)
    return _write_tsv(frame, path, CATALOG_FORMAT, encoding)


def write_split(
    split: SplitDataset,
    catalog: Catalog,
    dataset_stats: DatasetStats,
    manifest: RunManifest,
    directory: str,
    encoding: str = "utf-8",
) -> dict:
    """
    Grava o resultado do prep: train/valid/test.tsv, catalog.tsv, stats.json e manifest.json.

    Returns:
        dict: Caminhos gravados por nome
    """
    ensure_dir(directory)
    paths = {
        name: write_cases(cases, os.path.join(directory, f"{name}.tsv"), encoding)
        for name, cases in (("train", split.train_cases), ("valid", split.valid_cases), ("test", split.test_cases))
    }
    paths["catalog"] = write_catalog(catalog, os.path.join(directory, "catalog.tsv"), encoding)
    paths["stats"] = write_json(dataset_stats.to_dict(), os.path.join(directory, "stats.json"), encoding)
    paths["manifest"] = write_json(manifest.to_dict(), os.path.join(directory, "manifest.json"), encoding)
    logging.info(f"✅ Conjunto gravado em {directory}")
    return paths


def encode_array(value: np.ndarray) -> dict:
    """Array em base64 (little-endian, ordem de linha); reais em 32 bits, inteiros em int32."""
    dtype = np.dtype("<f4") if value.dtype.kind == "f" else np.dtype("<i4")
    data = np.ascontiguousarray(value, dtype=dtype)
    return {
        "dtype": dtype.name,
        "shape": list(data.shape),
        "data": base64.b64encode(data.tobytes()).decode("ascii"),
    }


def checkpoint_to_dict(checkpoint: ScorerCheckpoint) -> dict:
    return {
        "format": "recency-checkpoint",
        "version": 1,
        "spec": checkpoint.spec.to_dict(),
        "catalog_size": checkpoint.catalog_size,
        "seed": checkpoint.seed,
        "best_valid_hit": checkpoint.best_valid_hit,
        "epochs_run": checkpoint.epochs_run,
        "history": checkpoint.history,
        "parameters": {name: encode_array(value) for name, value in checkpoint.parameters.items()},
    }


def write_checkpoint(checkpoint: ScorerCheckpoint, path: str, encoding: str = "utf-8") -> str:
    write_json(checkpoint_to_dict(checkpoint), path, encoding)
    logging.info(f"✅ Checkpoint gravado: {path}")
    return path


def write_interactions(log: pd.DataFrame, path: str, encoding: str = "utf-8") -> str:
    """Log de interações no formato TSV bruto lido por ``ingest`` (sem cabeçalho)."""
    ensure_dir(os.path.dirname(path))
    log[["user", "item", "timestamp"]].to_csv(
        path, sep="\t", index=False, header=False, encoding=encoding, lineterminator="\n"
    )
    logging.info(f"✅ {len(log)} interações gravadas em {path}")
    return path


# === Relatórios no formato da tabela de resultados ===

def check_same_ks(reports: Sequence[MetricReport]) -> tuple:
    if not reports:
        raise MetricError("Nenhum relatório para renderizar")
    ks = tuple(reports[0].ks)
    for report in reports[1:]:
        if tuple(report.ks) != ks:
            logging.error(f"Relatórios com cortes K diferentes: {ks} e {tuple(report.ks)}")
            raise MetricError(f"Relatórios com cortes K diferentes: {ks} e {tuple(report.ks)}")
    return ks


def report_rows(reports: Sequence[MetricReport]) -> list:
    """
    Linhas da tabela como (rótulo, tipo, valores por relatório).

    Ordem: uma linha HRLI@10 (ou no maior K, se 10 não estiver entre os cortes);
    blocos NDCG (métrica, estrelada, Improv.) por K; blocos Hit por K; por fim n_eval
    e n_gt_equals_last. As linhas estreladas aparecem quando algum relatório tem
    mascaramento. HRLI* fica só no JSON, pois com mascaramento vale sempre zero.
    """
    ks = check_same_ks(reports)
    starred = any(r.mask_last for r in reports)
    hrli_k = 10 if 10 in ks else max(ks)
    rows = [(f"HRLI@{hrli_k}", "metric", [r.metrics[hrli_k].hrli for r in reports])]
    for name, attr in (("NDCG", "ndcg"), ("Hit", "hit")):
        for k in ks:
            rows.append((f"{name}@{k}", "metric", [getattr(r.metrics[k], attr) for r in reports]))
            if starred:
                rows.append((f"{name}*@{k}", "starred", [getattr(r.metrics[k], f"{attr}_star") for r in reports]))
                rows.append(("Improv.", "improv", [getattr(r.metrics[k], f"improvement_{attr}_pct") for r in reports]))
    rows.append(("n_eval", "count", [r.n_eval for r in reports]))
    rows.append(("n_gt_equals_last", "count", [r.n_gt_equals_last for r in reports]))
    return rows


def model_labels(reports: Sequence[MetricReport]) -> list:
    labels = []
    for position, report in enumerate(reports, start=1):
        label = report.label or f"modelo_{position}"
        while label in labels:
            label = f"{label}_{position}"
        labels.append(label)
    return labels


def report_table(reports: Sequence[MetricReport]) -> pd.DataFrame:
    """Tabela em texto: colunas = modelos, linhas = métricas formatadas."""
    labels = model_labels(reports)
    records = []
    for label, kind, values in report_rows(reports):
        if kind == "improv":
            cells = [format_improvement(v) for v in values]
        elif kind == "count":
            cells = [str(v) for v in values]
        else:
            cells = [format_metric(v, METRIC_DECIMALS) for v in values]
        records.append([label] + cells)
    return pd.DataFrame(records, columns=[METRIC_COLUMN] + labels)


def render_report(reports: Sequence[MetricReport], fmt: str) -> str:
    """
    Renderiza relatórios em tsv, markdown ou json (função pura dos relatórios).

    Raises:
        MetricError: Formato desconhecido ou cortes K inconsistentes
    """
    if fmt == "json":
        check_same_ks(reports)
        payload = {"format": TABLE_FORMAT, "version": 1, "reports": [r.to_dict() for r in reports]}
        return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    table = report_table(reports)
    if fmt == "tsv":
        return f"#{TABLE_FORMAT} v1\n" + table.to_csv(sep="\t", index=False, lineterminator="\n")
    if fmt == "markdown":
        return f"<!-- {TABLE_FORMAT} v1 -->\n" + table.to_markdown(index=False, disable_numparse=True) + "\n"
    raise MetricError(f"Formato de relatório desconhecido: {fmt!r}")


def write_report(
    reports: Sequence[MetricReport],
    path: str,
    fmt: str,
    theme: str = "default",
    border_theme: str = "default",
    encoding: str = "utf-8",
) -> str:
    if fmt == "xlsx":
        return export_report_xlsx(reports, path, theme=theme, border_theme=border_theme)
    ensure_dir(os.path.dirname(path))
    with open(path, "w", encoding=encoding, newline="\n") as handle:
        handle.write(render_report(reports, fmt))
    logging.info(f"✅ Relatório {fmt} gravado: {path}")
    return path


def _border(style: Optional[str], color: str) -> Optional[Border]:
    if not style:
        return None
    side = Side(style=style, color=color)
    return Border(left=side, right=side, top=side, bottom=side)


def export_report_xlsx(
    reports: Sequence[MetricReport],
    path: str,
    theme: str = "default",
    border_theme: str = "default",
    sheet_name: str = "HRLI",
) -> str:
    """
    Salva a tabela de métricas em uma planilha Excel, com cabeçalho colorido,
    linhas estreladas destacadas, linhas Improv. em negrito e larguras de
    coluna de ``style_config``. Métricas ficam numéricas (4 casas); melhorias
    ficam como texto com sinal.
    """
    ensure_dir(os.path.dirname(path))
    theme_cfg = THEMES.get(theme, THEMES["default"])
    border_cfg = BORDER_CONFIGS.get(border_theme, BORDER_CONFIGS["default"])
    labels = model_labels(reports)
    rows = report_rows(reports)

    records = []
    for label, kind, values in rows:
        cells = [format_improvement(v) for v in values] if kind == "improv" else values
        records.append([label] + list(cells))
    frame = pd.DataFrame(records, columns=[METRIC_COLUMN] + labels)

    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        frame.to_excel(writer, sheet_name=sheet_name, index=False)
        ws = writer.sheets[sheet_name]

        header_fill = PatternFill(start_color=theme_cfg["header_bg"], end_color=theme_cfg["header_bg"], fill_type="solid")
        header_font = Font(color=theme_cfg["header_font"], bold=True)
        starred_fill = PatternFill(start_color=theme_cfg["starred_bg"], end_color=theme_cfg["starred_bg"], fill_type="solid")
        border_color = border_cfg["border_color"]
        header_border = _border(BORDER_STYLES.get(border_cfg["header_border"]), border_color)
        data_border = _border(BORDER_STYLES.get(border_cfg["data_border"]), border_color)

        for idx, col in enumerate(frame.columns, start=1):
            letter = get_column_letter(idx)
            ws.column_dimensions[letter].width = COLUMN_WIDTHS.get(col, COLUMN_WIDTHS["default"])
            header_cell = ws[f"{letter}1"]
            header_cell.fill = header_fill
            header_cell.font = header_font
            header_cell.alignment = Alignment(horizontal="center")
            if header_border:
                header_cell.border = header_border

        for row_idx, (_, kind, _) in enumerate(rows, start=2):
            for col_idx in range(1, len(frame.columns) + 1):
                cell = ws.cell(row=row_idx, column=col_idx)
                if data_border:
                    cell.border = data_border
                if col_idx == 1:
                    continue
                if kind in ("metric", "starred"):
                    cell.number_format = METRIC_NUMBER_FORMAT
                elif kind == "count":
                    cell.number_format = COUNT_NUMBER_FORMAT
                cell.alignment = Alignment(horizontal="right")
                if kind == "starred":
                    cell.fill = starred_fill
                    cell.font = Font(color=theme_cfg["starred_font"])
                elif kind == "improv":
                    cell.font = Font(color=theme_cfg["improv_font"], bold=True)

    logging.info(f"✅ Relatório xlsx gravado: {path}")
    return path
