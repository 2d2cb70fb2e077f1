from django.conf import settings

DEFAULTS = {
    'CONIC_BACKEND': 'cvxopt',
    'CVXPY_SOLVER': 'CLARABEL',
    'SOLVER_TOL': 1e-8,
    'SYNTHESIS_TOL': 1e-7,
    'POOL_SIZE': 1,
    'OUTPUT_DIR': 'output',
}


def toolkit_setting(name: str):
    return getattr(settings, 'COARSE_ID', {}).get(name, DEFAULTS[name])
