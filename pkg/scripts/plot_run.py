"""Plot a logged run: plan view, tracking errors, slip estimates, steering.

Reads a log CSV produced by ``towtrack run`` (the track is rebuilt from the
config, or read from a track.csv sitting next to the log) and writes a
four-panel PNG next to the log.
"""
import argparse
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from towtrack.config import ExperimentConfig
from towtrack.harness import read_log
from towtrack.model import DEG


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--log", required=True, help="log CSV to plot")
    ap.add_argument("--config", default=None, help="config the run used")
    ap.add_argument("--out", default=None, help="output PNG (default: by the log)")
    args = ap.parse_args(argv)

    log = read_log(args.log)
    cfg = ExperimentConfig.load(args.config)
    track = cfg.track.build()
    t = log["t"]

    fig, axes = plt.subplots(2, 2, figsize=(12, 9))

    ax = axes[0, 0]
    ax.plot(track.x, track.y, "k--", lw=0.8, label="reference")
    ax.plot(log["true_xt"], log["true_yt"], "C0", lw=1.0, label="tractor")
    ax.plot(log["true_xi"], log["true_yi"], "C3", lw=1.0, label="trailer")
    ax.set_aspect("equal")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("plan view")

    ax = axes[0, 1]
    ax.plot(t, log["err_tractor"], "C0", lw=0.9, label="tractor")
    ax.plot(t, log["err_trailer"], "C3", lw=0.9, label="trailer")
    on_curve = np.array([tag == "curve" for tag in log["seg_tag"]])
    ax.fill_between(t, 0, 1, where=on_curve, transform=ax.get_xaxis_transform(),
                    color="0.9", label="curve segments")
    masked = log["gps_masked"] > 0
    if masked.any():
        ax.plot(t[masked], np.zeros(masked.sum()), "|", color="C1", ms=10,
                label="GPS dropout")
    ax.set_xlabel("t (s)")
    ax.set_ylabel("distance to path (m)")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("tracking error")

    ax = axes[1, 0]
    for name, label, color in (("est_mu", "longitudinal (tractor)", "C0"),
                               ("est_kappa", "side (tractor)", "C2"),
                               ("est_eta", "side (trailer)", "C3")):
        ax.plot(t, log[name], color, lw=1.0, label=label)
        ax.plot(t, log["true_" + name[4:]], color + "--", lw=0.8, alpha=0.6)
    ax.set_xlabel("t (s)")
    ax.set_ylabel("slip coefficient (dashed: truth)")
    ax.set_ylim(0.2, 1.05)
    ax.legend(loc="lower right", fontsize=8)
    ax.set_title("slip estimates")

    ax = axes[1, 1]
    ax.plot(t, log["cmd_delta_t"] / DEG, "C0", lw=0.9, label="tractor cmd")
    ax.plot(t, log["act_delta_t"] / DEG, "C0--", lw=0.8, alpha=0.7)
    ax.plot(t, log["cmd_delta_i"] / DEG, "C3", lw=0.9, label="trailer cmd")
    ax.plot(t, log["act_delta_i"] / DEG, "C3--", lw=0.8, alpha=0.7)
    ax.set_xlabel("t (s)")
    ax.set_ylabel("steering (deg, dashed: actuator)")
    ax.legend(loc="upper right", fontsize=8)
    ax.set_title("steering")

    fig.tight_layout()
    out = args.out or os.path.splitext(args.log)[0] + ".png"
    fig.savefig(out, dpi=130)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
