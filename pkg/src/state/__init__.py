# Sweep state definitions
