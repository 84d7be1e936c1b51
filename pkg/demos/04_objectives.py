"""Identity and pixel objectives, the identity classifier, and gradient checks."""
import numpy as np

from thermvis import objectives as obj

st = obj.smoothed_targets(y=0, n=236, epsilon=0.1)
print("smoothed target:", round(st.q[0], 7), "others", f"{st.q[1]:.4e}", "sum", st.q.sum())

rng = np.random.default_rng(0)
f_syn, f_real = rng.normal(size=128), rng.normal(size=128)
logits = rng.normal(size=236)
lc = obj.identity_loss(f_syn, f_real, logits, y=0, n=236, epsilon=0.1)
a, b = rng.uniform(0, 1, (128, 128)), rng.uniform(0, 1, (128, 128))
l1 = obj.l1_pixel_loss(a, b)
print("L_C", round(lc, 4), "L_1", round(l1, 4), "L", round(obj.composite_loss(0.7, l1, lc), 4))

# train the D -> H -> H -> N classifier on clustered embeddings
centres = rng.normal(size=(5, 16))
x = np.repeat(centres, 30, axis=0) + 0.3 * rng.normal(size=(150, 16))
y = np.repeat(np.arange(5), 30)
m = obj.MlpClassifier.init(16, 5, hidden=32, seed=1)
for step in range(301):
    m, loss = obj.mlp_train_step(m, zip(x, y), epsilon=0.1, lr=0.2)
    if step % 100 == 0:
        print(f"step {step:3d} loss {loss:.4f}")
print("train accuracy", np.mean(np.argmax(obj.mlp_forward(m, x), axis=1) == y))

print("gradient audit:", {k: f"{v:.1e}" for k, v in obj.gradient_audit(seed=3).items()})
