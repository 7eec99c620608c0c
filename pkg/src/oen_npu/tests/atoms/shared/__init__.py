# Shared tests package
