"""conflab: rotationally symmetric conformal geometry on even spheres.

Submodules:
    symmfunc     -- elementary symmetric function algebra and inequalities
    sphere       -- discretized conformal metrics e^{-2u} g_0 on S^{2m}
    functionals  -- the 1-form alpha, its primitive E, the functional F
    flows        -- geodesics of the v_m-metric and the inverse v_m-flow
    inequalities -- Andrews-type weighted Poincare inequality checks
    cli          -- the `conflab` experiment runner
"""

__version__ = "0.1.0"
