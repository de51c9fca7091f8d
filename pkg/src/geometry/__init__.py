# Holes, perforated domains and masks
