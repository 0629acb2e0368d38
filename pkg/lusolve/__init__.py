"""Lower and upper solutions of periodic second-order equations: periodic orbits,
Dirichlet extremals and asymptotic trajectories."""
