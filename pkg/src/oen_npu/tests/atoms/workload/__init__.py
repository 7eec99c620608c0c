# Workload tests package
