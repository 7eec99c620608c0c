# Hardware package - budgets, DAC scaling and the SNR energy bound
