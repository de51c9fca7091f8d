# Sweep workflow graph
