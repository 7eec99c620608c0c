# Atom tests package
