"""Evaluation and orchestration: Dice, cross-validation, the ablation runner, tables and CLI."""
from .ablation import VARIANTS, BenchConfig, PropagationCache, atlases_for, run_ablation, run_fold, run_variant
from .config import apply_overrides, read_config
from .metrics import DiceReport, FoldSplit, dice, five_fold, foreground_dice, roi_dice
from .tables import parse_csv, render_tables, to_csv

__all__ = [
    "VARIANTS", "BenchConfig", "PropagationCache", "atlases_for", "run_ablation", "run_fold", "run_variant",
    "apply_overrides", "read_config", "DiceReport", "FoldSplit", "dice", "five_fold", "foreground_dice",
    "roi_dice", "parse_csv", "render_tables", "to_csv",
]
