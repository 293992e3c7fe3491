import os

# keep BLAS single-threaded: the batched small-k GEMMs in attention thrash
# badly with thread sync on few-core machines, and single-threaded execution
# is what the bitwise-determinism contracts assume
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
