"""Shared helpers for the experiment scripts."""
import argparse
from pathlib import Path

import numpy as np


def base_parser(description):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at 0")
    p.add_argument("--out", type=Path, default=None, help="directory for CSV outputs")
    return p


def summarize(label, records):
    a = np.array([r.average_accuracy for r in records])
    f = np.array([r.final_forgetting for r in records])
    print(f"{label:28s} A = {a.mean():.4f} ± {a.std():.4f}   F = {f.mean():.4f} ± {f.std():.4f}")
    return a.mean(), f.mean()
