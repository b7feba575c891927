"""Stage 2 on one episode: transductive finetuning and ensemble inference.

The cosine head starts at class-mean support features, then the whole
network adapts with support cross-entropy, query entropy, and the
filtered/unfiltered consistency term. Prediction averages logits over the
radius distribution carried over from pretraining.
"""

import numpy as np

from lffs.data import SyntheticConfig, generate_synthetic, sample_episode
from lffs.evaluate import ensemble_logits
from lffs.finetune import FinetuneConfig, finetune_episode
from lffs.pretrain import PretrainConfig, distill_student, train_teacher

base, novel = generate_synthetic(SyntheticConfig(), seed=42)
pcfg = PretrainConfig(epochs=20, batch_size=32, width=16, distill_lr=3e-3, seed=1)
teacher = train_teacher(base, pcfg)
student = distill_student(teacher.params, base, pcfg)

episode = sample_episode(novel, k=5, shots=1, queries_per_class=15,
                         rng=np.random.default_rng(7))
print(f"episode: {episode.k}-way, support {episode.n_support}, "
      f"query {episode.n_query}")

result = finetune_episode(
    student.params, episode, student.schedule, FinetuneConfig(epochs=10, lr=3e-4, seed=3)
)
print("\nloss trace:")
for t in result.loss_trace:
    print(f"  epoch {t['epoch']:>2} (r={t['radius']:>2}): "
          f"ce={t['loss_ce']:.3f} ent={t['loss_entropy']:.3f} "
          f"cos={t['loss_freq']:.3f}")

truth = episode.query_labels.reveal()  # evaluation step may look
model = result.model
radii, weights = student.schedule.radii, student.schedule.weights

from lffs.autodiff import Tensor, no_grad

with no_grad():
    plain = model.logits(Tensor(episode.query_images)).data.argmax(-1)
ens = ensemble_logits(model, episode.query_images, radii, weights).argmax(-1)
print(f"\nclean accuracy, plain forward:    {(plain == truth).mean():.3f}")
print(f"clean accuracy, weighted ensemble: {(ens == truth).mean():.3f}")
