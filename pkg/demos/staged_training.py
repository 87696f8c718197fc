"""Miniature staged training run, end to end.

Stage 1 trains only the decoupling front end on a reconstruction loss.
Stage 2 freezes it and trains the target branch; stage 3 freezes both
and trains the jamming branch. Widths and epoch counts here are cut way
down so the whole thing finishes in about a minute on one core; the
mechanics are identical at full size.
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

logging.basicConfig(level=logging.INFO, format="%(message)s")
logging.getLogger("jointhrrp.signal").setLevel(logging.ERROR)

mc = M.ModelConfig(
    decoupler=DecouplerConfig(c_ch=4, latent_ch=6, stem_k=5, enc_k=3),
    temporal=TemporalConfig(in_len=1024, fused_ch=4, h=8, state_size=4),
    head=HeadConfig(hidden=16, c_tar=3),
)
net = M.build_model(mc, seed=42)
print(f"parameters: {sum(p.data.size for _, p in net.named_parameters())}")

synth = ds.SynthConfig(snr_db=(0.0, 10.0), sjr_db=(-5.0, 0.0))
data = tr.build_train_data(3, seed=42, synth=synth, per_epoch=96,
                           val_count=64, protos_per_class=12)

out = tempfile.mkdtemp(prefix="staged_")
for stage, epochs in (("decouple", 3), ("target", 3), ("jamming", 3)):
    cfg = tr.TrainConfig(stage=stage, epochs=epochs, patience=epochs, seed=42)
    res = tr.train_stage(net, data, cfg, out)
    print(f"[{stage}] best epoch {res.best_epoch}, "
          f"val metric {res.best_metric:.4f}")

p_test = ds.make_prototypes(3, per_class=6, seed=5)
test = ds.synthesize_set(data.bank, p_test, synth, 128, seed=7, c_tar=3)
rep = ev.evaluate_model(net, test)
print(f"target accuracy     {rep['target']['accuracy']:.3f}")
print(f"jamming element acc {rep['jamming']['element_accuracy']:.3f}")
print(f"jamming subset acc  {rep['jamming']['subset_accuracy']:.3f}")
print("(tiny model, tiny budget; the numbers only sanity-check the plumbing)")
