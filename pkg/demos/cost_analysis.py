"""How much does a GSM layer cost on a full-size backbone?

Runs the analyzer over the bundled architecture specs at 8 frames, 224x224,
and shows where the gating parameters and FLOPs go.

    python3 demos/cost_analysis.py
"""

from gsmnet import analysis
from gsmnet.gsm import gsm_param_count


def main() -> None:
    for name in ("bn_inception", "bn_inception_gsm", "inception_v3_gsm"):
        spec = analysis.parse_archspec(analysis.shipped_spec(name))
        rep = analysis.report(spec, frames=8)
        print(f"{name:<18s} params {rep.total_params:>11,d}  flops {rep.total_flops:>15,d}  "
              f"overhead params +{rep.param_overhead_pct:.2f}% flops +{rep.flop_overhead_pct:.2f}%")
    print("(the full per-layer table: gsmnet analyze bn_inception_gsm)\n")

    rep = analysis.report(analysis.parse_archspec(analysis.shipped_spec("bn_inception_gsm")), frames=8)
    print("GSM layers on BN-Inception")
    for layer in rep.layers:
        if layer.is_gsm:
            print(f"  {layer.name:<40s} params {layer.params:>7d}  flops {layer.flops:>12,d}")
    print(f"  total gating params {rep.gsm_params:,d} of {rep.total_params:,d}")

    # gating cost is linear in channels: one 3x3x3 kernel per channel
    print("gate parameters per layer width:")
    for c in (64, 128, 256, 512, 1024):
        print(f"  C={c:<5d} {gsm_param_count(c):>6d}")


if __name__ == "__main__":
    main()
