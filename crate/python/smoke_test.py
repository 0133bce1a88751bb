"""Smoke test for the momflight_py extension.

Build and install first:  pip install --no-build-isolation -e crates/py
"""

import itertools
import sys
import tempfile

import numpy as np

import momflight_py as mf


def check(name, ok, detail=""):
    print(f"{'ok  ' if ok else 'FAIL'} {name} {detail}".rstrip())
    return ok


def rotate(q, w):
    """Left-multiplies the (w, x, y, z) quaternion by the rotation vector `w`."""
    angle = np.linalg.norm(w)
    axis = w / angle if angle > 0 else np.zeros(3)
    a = np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])
    b = np.array(q)
    return [
        a[0] * b[0] - a[1:] @ b[1:],
        *(a[0] * b[1:] + b[0] * a[1:] + np.cross(a[1:], b[1:])),
    ]


def main():
    rng = np.random.default_rng(1)
    model = mf.Model.surrogate()
    results = []

    s = rng.uniform(-1, 1, model.dof).tolist()
    quat = rng.normal(size=4)
    quat = (quat / np.linalg.norm(quat)).tolist()
    pose = dict(joints=s, position=[0.3, -0.2, 1.0], orientation=quat)

    m = np.array(model.mass_matrix(**pose))
    eig = np.linalg.eigvalsh(m)
    results.append(check("mass matrix symmetric positive definite",
                         np.allclose(m, m.T) and eig.min() > 0, f"min eig {eig.min():.3e}"))

    nu = rng.normal(size=model.nv).tolist()
    h = np.array(model.momentum(nu, **pose))
    jh = np.array(model.centroidal_momentum_matrix(**pose))
    results.append(check("momentum equals CMM times velocity", np.allclose(jh @ nu, h, atol=1e-10)))
    eps = 1e-6
    ahead = dict(pose, joints=(np.array(s) + eps * np.array(nu[6:])).tolist(),
                 position=(np.array(pose["position"]) + eps * np.array(nu[:3])).tolist(),
                 orientation=rotate(quat, np.array(nu[3:6]) * eps))
    c_dot = (np.array(model.center_of_mass(**ahead)) - np.array(model.center_of_mass(**pose))) / eps
    results.append(check("linear momentum is m times CoM velocity",
                         np.allclose(h[:3], model.total_mass * c_dot, rtol=1e-4, atol=1e-4)))

    again = mf.Model.from_urdf(model.to_urdf())
    results.append(check("URDF round trip",
                         np.allclose(again.mass_matrix(**pose), m, atol=1e-9) and again.dof == model.dof))

    # small QP against enumeration of every active set
    hq = np.array([[4.0, 1.0], [1.0, 2.0]])
    g = np.array([-8.0, 3.0])
    lo, up = np.array([-1.0, 0.0]), np.array([1.5, 2.0])
    sol = mf.solve_box_qp(hq.tolist(), g.tolist(), lo.tolist(), up.tolist())
    best = np.inf
    for pattern in itertools.product((0, 1, 2), repeat=2):
        x = np.zeros(2)
        free = [i for i, p in enumerate(pattern) if p == 0]
        for i, p in enumerate(pattern):
            x[i] = lo[i] if p == 1 else up[i] if p == 2 else 0.0
        if free:
            fixed = [i for i in range(2) if i not in free]
            rhs = -g[free] - hq[np.ix_(free, fixed)] @ x[fixed]
            x[free] = np.linalg.solve(hq[np.ix_(free, free)], rhs)
        if np.all(x >= lo - 1e-12) and np.all(x <= up + 1e-12):
            best = min(best, 0.5 * x @ hq @ x + g @ x)
    results.append(check("box QP matches enumeration",
                         abs(sol["objective"] - best) < 1e-10 and sol["kkt_residual"] < 1e-9,
                         f"x = {np.round(sol['x'], 6)}"))

    sim = mf.Simulation(model, "sim1")
    rows = np.array(sim.run(0.2))
    cols = sim.columns()
    results.append(check("simulation rows", rows.shape == (200, len(cols)), f"{rows.shape}"))
    t = rows[:, cols.index("t [s]")]
    # rows are stamped at the start of each step
    results.append(check("simulation clock", np.allclose(np.diff(t), 1e-3) and t[0] == 0 and np.isclose(sim.time, 0.2)))
    thrust = rows[:, [cols.index(f"T{i} [N]") for i in range(1, 5)]]
    results.append(check("thrust within bounds", thrust.min() >= 0 and thrust.max() <= 100))
    with tempfile.NamedTemporaryFile(suffix=".csv") as f:
        sim.write_csv(f.name)
        text = open(f.name).read().splitlines()
        results.append(check("csv export", len(text) == 201 and text[0].split(",") == cols))

    checks = model.verify(seed=3)
    failed = [c[0] for c in checks if not c[3]]
    results.append(check("built-in verification", not failed, ", ".join(failed)))

    try:
        mf.Simulation(model, "barrel-roll")
        results.append(check("unknown scenario rejected", False))
    except ValueError:
        results.append(check("unknown scenario rejected", True))

    print(f"{sum(results)}/{len(results)} passed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main())
