"""Parameter and FLOP counts of the six UNet variants."""

from atsunet import model_zoo as mz

print("%-7s %8s %12s" % ("variant", "params", "flops"))
for variant in sorted(mz.VARIANTS, key=lambda v: mz.count_flops(mz.default_config(v))):
    cfg = mz.default_config(variant)
    print("%-7s %8d %12d" % (variant, mz.count_params(cfg), mz.count_flops(cfg)))

# per-layer breakdown of the shifted variant; the shift layers are free
for name, kind, shape, params, flops in mz.layer_costs(mz.default_config("ats"))[:6]:
    print(f"{name:10s} {kind:10s} {str(shape):14s} {params:5d} {flops:9d}")
