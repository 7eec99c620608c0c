# Hardware tests package
