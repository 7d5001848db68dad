"""
Corpus Package
Check-in and taxi ingestion, synthetic worlds and snapshot storage
"""
