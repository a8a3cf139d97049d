"""Modified IEEE 14-bus case: distributed dispatch over six 10-minute slots.

Five generators and seven storage devices share one window. The script
integrates the dynamics until the state derivative falls below 1e-5
(about a minute and a half), checks the answer against the reference
solver, and prints the tables behind the usual dispatch plots: generator
outputs and ramp rates, storage energy trajectories and bus voltages. The
convergence trace is written to ``ieee14_trace.csv`` in the working
directory.

Run with ``python3 demos/ieee14_dispatch.py`` (one to two minutes).
"""

import numpy as np

from mtsed import assemble_problem, compact_matrices, load_case, run_window
from mtsed.verify import check_feasibility, oracle


def table(title, rows, labels, values, fmt="{:9.3f}"):
    print(f"\n{title}")
    print("  bus " + "".join(f"{label:>9}" for label in labels))
    for bus, row in zip(rows, values):
        print(f"  {bus:>3} " + "".join(fmt.format(v) for v in row))


def main():
    case = load_case("ieee14_mtsed")
    problem = assemble_problem(case)
    ref = oracle(compact_matrices(problem))
    print(f"reference solver: {ref.cost:.3f} $/h")

    result = run_window(problem)
    gap = abs(result.cost - ref.cost) / ref.cost
    print(f"dynamics: converged={result.converged} in {result.wall_seconds:.1f} s "
          f"({result.steps} steps), cost {result.cost:.3f} $/h, relative gap {gap:.1e}")
    result.trace.to_csv("ieee14_trace.csv")

    sol = result.solution
    base = problem.base_mva
    slots = [f"k={k + 1}" for k in range(case.tau)]
    gens = [case.index(b) for b in case.generator_buses]
    stos = [case.index(b) for b in case.storage_buses]
    table("generator output (MW)", case.generator_buses, slots, base * sol.p_g[gens])
    table("ramp rate (MW/h)", case.generator_buses, slots, base * problem.ramps(sol)[gens])
    energy = base * problem.energy_levels(sol)[stos]
    table("stored energy (MWh)", case.storage_buses, ["k=0"] + slots, energy)
    net = base * (sol.p_d - sol.p_c)[stos]
    table("storage net discharge (MW)", case.storage_buses, slots, net)
    table("voltage magnitude (p.u.)", case.bus_ids, slots, sol.v, fmt="{:9.4f}")

    feas = check_feasibility(sol, problem)
    worst = max(feas.pu().items(), key=lambda kv: kv[1])
    print(f"\nlargest constraint violation: {worst[0]} {worst[1]:.1e} p.u.")
    print(f"KKT certificate: worst scaled residual {result.kkt.worst:.1e}")
    print(f"max p_c * p_d: {np.max(sol.p_c * sol.p_d):.1e} p.u.^2")


if __name__ == "__main__":
    main()
