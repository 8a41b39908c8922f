"""Overfit eight synthetic images and watch the loss fall.

The point of an overfit run is a fast sanity check of the whole training
stack: if the model cannot memorize eight images, nothing downstream is
worth debugging. Takes about half a minute on a laptop CPU.
"""
import tempfile
from pathlib import Path

from lesionseg import ModelConfig, SegmentationNetwork, train, generate
from lesionseg.data import to_batch
from lesionseg.metrics import evaluate_pair, aggregate

cfg = ModelConfig(total_iters=300, augment=False, seed=0).validate()
samples = generate(8, cfg.input_size, seed=42)
model = SegmentationNetwork(cfg)

with tempfile.TemporaryDirectory() as td:
    result = train(model, cfg, samples, td)
    log = Path(result["log_path"]).read_text().splitlines()

# print every 30th log row: iter, lr, total
print("iter    lr          total")
for row in log[1::30]:
    cells = row.split(",")
    print(f"{cells[0]:>4s}  {float(cells[1]):.6f}  {float(cells[6]):.4f}")

records = []
for s in samples:
    mask, _ = model.predict(s.image.transpose(2, 0, 1)[None])
    records.append(evaluate_pair(s.sample_id, s.category, mask[0, 0],
                                 s.mask))
rep = aggregate(records)
print(f"\ntrain-set mean jaccard after {cfg.total_iters} iters: "
      f"{rep.overall['JA']:.3f}")
print("per image:", " ".join(f"{r.metrics['JA']:.2f}" for r in records))
