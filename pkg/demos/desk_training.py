# # Desk-scale training and loss ablation
#
# Full-size training needs large datasets and GPU days. A small model on
# synthetic underwater-style pairs still shows the moving parts: the
# optimization loop, checkpoints, and the per-image PSNR distributions used
# to compare loss combinations. Takes about a minute on one CPU core.

# In[1]:

import tempfile
from pathlib import Path

from cevae.data import PairedDataset
from cevae.model import small_config
from cevae.objectives import LossToggles
from cevae.synthetic import synthetic_pairs
from cevae.trainer import TrainConfig, Trainer, ablate_losses, quartiles

cfg = small_config(32)
train = PairedDataset(synthetic_pairs(8, size=32, seed=0), size=32, augment=False)
settings = TrainConfig(lr=1e-3, batch_size=4, steps=300,
                       toggles=LossToggles.parse("rec,ssim"), augment=False)

# Overfit eight pairs. PSNR is measured in the [0, 1] range.

# In[2]:

trainer = Trainer(cfg, settings)
print(f"step 0:   {trainer.train_psnr(train):.2f} dB")
trainer.fit(train, settings.steps)
print(f"step {trainer.step}: {trainer.train_psnr(train):.2f} dB")

# A checkpoint carries the config hash and resumes bit-exactly.

# In[3]:

path = trainer.save(Path(tempfile.mkdtemp()) / "desk.pt")
print("restored at step", Trainer.load(path, cfg).step)

# Same seed, two loss recipes, one PSNR record per held-out image.

# In[4]:

held_out = synthetic_pairs(6, size=32, seed=5)
table = ablate_losses(cfg, settings, train, held_out,
                      {"rec": LossToggles.parse("rec"), "rec+ssim": LossToggles.parse("rec,ssim")},
                      steps=100)
for name, rows in table.items():
    lo, q1, med, q3, hi = quartiles([p for _, p in rows])
    print(f"{name:9s} min {lo:6.2f}  q1 {q1:6.2f}  median {med:6.2f}  q3 {q3:6.2f}  max {hi:6.2f}")
