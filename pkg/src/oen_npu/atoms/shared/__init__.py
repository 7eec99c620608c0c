# Shared package - common utilities, data types and configuration
