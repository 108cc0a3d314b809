# # Capture now, enhance later
#
# On the vehicle only the encoder runs: frames become latent files. Back on
# shore, the two decoders rebuild an enhanced image from each latent alone.
# The model here is untrained, so the point is the data flow.

# In[1]:

import tempfile
from pathlib import Path

import torch

from cevae.codec import read_latent, write_latent
from cevae.model import CEVAE, small_config
from cevae.synthetic import synthetic_pairs

torch.manual_seed(0)
model = CEVAE(small_config(64)).eval()
frames = synthetic_pairs(3, size=64, seed=0)

# Online phase: encode and store.

# In[2]:

tmp = Path(tempfile.mkdtemp())
for f in frames:
    with torch.no_grad():
        latent, secs = model.encoder.encode_timed(f.degraded.unsqueeze(0), repeats=3)
    n = write_latent(tmp / f"{f.id}.cevl", latent[0], "f32")
    print(f"{f.id}: {n} bytes, median encode {secs * 1e3:.1f} ms")

# Offline phase: decode from the stored latents only.

# In[3]:

for path in sorted(tmp.glob("*.cevl")):
    z = torch.from_numpy(read_latent(path)).unsqueeze(0)
    with torch.no_grad():
        out = model.enhance(z)
        parts = (model.decode_capsule(model.capsule_vectors(z)), model.decode_spatial(z))
    print(path.stem, tuple(out.shape), "branch sum matches:",
          torch.allclose(model.decode(z), parts[0] + parts[1]))
