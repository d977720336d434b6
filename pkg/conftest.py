# Root conftest: puts the repo root on sys.path so `src.kerrloop` imports resolve.
