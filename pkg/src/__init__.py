# Homogenization Lab: Carreau-Yasuda flow in perforated domains and its Darcy limit
