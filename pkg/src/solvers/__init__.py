# Cell, micro and Darcy solvers
