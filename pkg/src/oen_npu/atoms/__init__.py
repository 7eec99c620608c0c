# Atoms package - basic building blocks
