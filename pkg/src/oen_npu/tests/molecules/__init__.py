# Molecule tests package
