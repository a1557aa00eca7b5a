"""Configuration, errors, logging, phonological schemes and WAV I/O."""
