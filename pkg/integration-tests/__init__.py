"""
augbank integration tests

Exercise the bank, embedding, retrieval, training and pipeline modules
in-process, and the HTTP API through the Flask test client.
"""
