"""Score a trained model and sweep its accuracy over jamming strength.

Reuses the staged_training recipe to get a (small, weak) model, then
runs the full metrics report plus a 1-d SJR sweep with the SNR pinned.
"""

import logging
import tempfile

from jointhrrp import dataset as ds
from jointhrrp import evaluator as ev
from jointhrrp import model as M
from jointhrrp import trainer as tr
from jointhrrp.decoupler import DecouplerConfig
from jointhrrp.heads import HeadConfig
from jointhrrp.temporal import TemporalConfig

logging.getLogger("jointhrrp.signal").setLevel(logging.ERROR)

mc = M.ModelConfig(
    decoupler=DecouplerConfig(c_ch=4, latent_ch=6, stem_k=5, enc_k=3),
    temporal=TemporalConfig(in_len=1024, fused_ch=4, h=8, state_size=4),
    head=HeadConfig(hidden=16, c_tar=3),
)
net = M.build_model(mc, seed=42)
synth = ds.SynthConfig(snr_db=(0.0, 10.0), sjr_db=(-5.0, 0.0))
data = tr.build_train_data(3, seed=42, synth=synth, per_epoch=96,
                           val_count=64, protos_per_class=12)
out = tempfile.mkdtemp(prefix="sweep_")
for stage in ("decouple", "target", "jamming"):
    tr.train_stage(net, data,
                   tr.TrainConfig(stage=stage, epochs=3, patience=3, seed=42),
                   out)

p_test = ds.make_prototypes(3, per_class=6, seed=5)
test = ds.synthesize_set(data.bank, p_test, synth, 128, seed=7, c_tar=3)
rep = ev.evaluate_model(net, test)
print("report keys:", sorted(rep.keys()))
print(f"accuracy {rep['target']['accuracy']:.3f}  "
      f"macro F1 {rep['target']['macro_f1']:.3f}")
print(f"decoupling: leakage {rep['decoupling']['mean_leakage']:.3f}, "
      f"SI-SNR {rep['decoupling']['mean_si_snr']:.1f} dB")

print("\nSJR sweep at SNR = 5 dB (stronger jamming to the right):")
rows = ev.sweep(net, data.bank, p_test, synth, 3, "sjr",
                [0.0, -5.0, -10.0], count=96, seed=11, fixed_other=5.0)
for r in rows:
    print(f"  sjr {r['sjr_lo']:+6.1f} dB  acc {r['target_accuracy']:.3f}  "
          f"subset {r['subset_accuracy']:.3f}")
