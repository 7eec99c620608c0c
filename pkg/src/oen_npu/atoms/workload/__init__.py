# Workload package - transformer operation counting
