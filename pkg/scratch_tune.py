import time
import numpy as np
import qocgrad as q


def pair(name, T, N, alpha, center, width, mom, r_noisy, eta=0.04, iters=2000, seed=7):
    h0, mu, obs = q.build_example_model(q.ExampleModelParams(dimension=64))
    psi0 = q.gaussian_state(64, center, width, mom)
    spec = q.ObjectiveSpec(h0=h0, mu=mu, observable=obs, alpha=alpha, horizon=T,
                           num_steps=N, initial_state=psi0)
    out = {}
    for tag, r in (("clean", 0.0), ("noisy", r_noisy)):
        cfg = q.OptimizerConfig(eta=eta, max_iterations=iters, noise_std=r, seed=seed)
        t0 = time.perf_counter()
        tr = q.ascend(spec, spec.grid_template(), cfg, record_iterates=False)
        dt = time.perf_counter() - t0
        J = tr.objective_values
        total = J[-1] - J[0]
        last200 = J[-1] - J[-201]
        mono = np.all(np.diff(J) >= -1e-12)
        print(f"{name}/{tag}: J0={J[0]:.4f} Jend={J[-1]:.5f} total={total:.5f} "
              f"last200/total={last200/total if total else float('nan'):.5f} mono={mono} "
              f"gend={tr.gradient_norms[-1]:.2e} "
              f"umax={np.abs(tr.final_control.nodal_values).max():.4f} "
              f"l1/T={q.l1_norm(tr.final_control)/T:.4f} wall={dt:.0f}s", flush=True)
        out[tag] = tr
    uc = out["clean"].final_control.nodal_values
    un = out["noisy"].final_control.nodal_values
    jgap = abs(out["noisy"].objective_values[-1] - out["clean"].objective_values[-1])
    jrel = jgap / abs(out["clean"].objective_values[-1])
    l2rel = np.linalg.norm(un - uc) / np.linalg.norm(uc)
    print(f"{name}: |Jn-Jc|/|Jc|={jrel:.4f} (need<.05)  ||un-uc||/||uc||={l2rel:.4f} (need<.10)",
          flush=True)


pair("S a=2.0 c=2 w=1.5 k=0", 4.0, 200, 2.0, 2.0, 1.5, 0.0, r_noisy=0.002)
pair("T a=1.5 c=2 w=1.5 k=0", 4.0, 200, 1.5, 2.0, 1.5, 0.0, r_noisy=0.002)
