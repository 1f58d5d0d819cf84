"""Inspect the three architecture variants: parameter budgets, receptive
fields, and how the causality mode redistributes temporal padding.

Run:  python demos/02_architecture_report.py
"""

from tfcn import (
    CausalityMode,
    build_model,
    max_look_ahead,
    param_count,
    plan_padding,
    receptive_field,
    tcn_lps_config,
    tfcn_config,
    tfcn_d_config,
)

FRAME_MS = 16.0

print(f"{'variant':<10} {'params':>12} {'past':>6} {'future':>7} {'freq span':>10}")
for name, cfg in [("tcn_lps", tcn_lps_config()),
                  ("tfcn", tfcn_config()),
                  ("tfcn_d", tfcn_d_config())]:
    past, future, freq_span = receptive_field(cfg)
    print(f"{name:<10} {param_count(cfg):>12,} {past:>6} {future:>7} {freq_span:>10}")

print()
print("tfcn causality modes (past/future frames and milliseconds):")
for label, mode in [("non-causal", CausalityMode.non_causal()),
                    ("semi 304 ms", CausalityMode.semi_causal(19)),
                    ("semi 48 ms", CausalityMode.semi_causal(3)),
                    ("causal", CausalityMode.causal())]:
    past, future, _ = receptive_field(tfcn_config(mode))
    print(f"  {label:<12} past {past:>4} ({past * FRAME_MS:6.0f} ms)   "
          f"future {future:>4} ({future * FRAME_MS:5.0f} ms)")

print()
cfg = tfcn_config(CausalityMode.semi_causal(19))
print(f"semi-causal look-ahead budget 19 of max {max_look_ahead(cfg)};")
print("greedy front-to-back split over the layers that see time:")
for e in plan_padding(cfg).entries:
    if e.kernel[1] > 1:
        print(f"  {e.name:<16} kernel {e.kernel} dilation {e.dilation}"
              f"  pad (left {e.left_t:>3}, right {e.right_t})")

model = build_model(tfcn_config(), seed=0)
print(f"\ninstantiated tfcn: {model.num_params:,} scalars across "
      f"{len(model.parameters())} parameter tensors")
