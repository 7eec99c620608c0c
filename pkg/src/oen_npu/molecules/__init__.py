# Molecules package - higher-level functionality built from atoms
