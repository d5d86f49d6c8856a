import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as P

from aloha_mpr import config
from aloha_mpr.errors import DomainError, InvalidParameterError, NumericalFailureError

logger = logging.getLogger(__name__)


def conjugate(values):
    """Harmonic conjugate of a periodic sample vector on a uniform grid (zero mean)."""
    n = len(values)
    spectrum = np.fft.fft(values)
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    multiplier = -1j * np.sign(freqs)
    if n % 2 == 0:
        multiplier[n // 2] = 0.0
    return np.real(np.fft.ifft(spectrum * multiplier))


@dataclass(frozen=True)
class SchwarzSeries:
    """Power series of the function analytic in |z| < 1 whose real part on |z| = 1
    matches uniformly spaced samples and whose imaginary part vanishes at 0."""
    coeffs: np.ndarray

    @classmethod
    def from_boundary(cls, values):
        values = np.asarray(values, dtype=float)
        n = len(values)
        spectrum = np.fft.rfft(values) / n
        coeffs = np.empty(len(spectrum), dtype=complex)
        coeffs[0] = spectrum[0].real
        coeffs[1:] = 2 * spectrum[1:]
        if n % 2 == 0:
            coeffs[-1] = spectrum[-1]
        return cls(coeffs=coeffs)

    def __call__(self, z):
        return P.polyval(z, self.coeffs)

    def derivative(self, z):
        return P.polyval(z, P.polyder(self.coeffs))

    def scaled(self, factor):
        return SchwarzSeries(coeffs=self.coeffs * factor)


@dataclass(frozen=True)
class ConformalMap:
    """Map gamma_0 from the unit disk onto the interior of a star-shaped contour.

    psi[j] is the boundary correspondence at phi[j]; exponent is the series of
    F(z) with gamma_0(z) = z exp(F(z)).
    """
    contour: object
    phi: np.ndarray
    psi: np.ndarray
    exponent: SchwarzSeries
    iterations: int
    residual: float
    history: list = field(default_factory=list, repr=False)

    @property
    def n_grid(self):
        return len(self.phi)

    @property
    def symmetry_residual(self):
        mirrored = np.append(self.psi[:1], 2 * np.pi - self.psi[:0:-1])
        return float(np.max(np.abs(self.psi - mirrored)))

    def boundary(self):
        """gamma_0 at the grid points e^{i phi_j}."""
        return self.contour.radius_at(self.psi) * np.exp(1j * self.psi)

    def gamma0(self, z):
        z = np.asarray(z, dtype=complex)
        if np.any(np.abs(z) > 1 + 1e-12):
            raise DomainError("gamma_0 is defined on the closed unit disk only")
        out = z * np.exp(self.exponent(z))
        return complex(out) if out.ndim == 0 else out

    def gamma0_prime(self, z):
        z = np.asarray(z, dtype=complex)
        out = np.exp(self.exponent(z)) * (1 + z * self.exponent.derivative(z))
        return complex(out) if out.ndim == 0 else out

    def gamma(self, x):
        if np.ndim(x):
            return np.array([self.gamma(v) for v in np.ravel(x)]).reshape(np.shape(x))
        x = complex(x)
        if x == 0:
            return 0j
        if not self.contour.contains(x):
            raise DomainError(f"x = {x:.6g} is not inside the contour")
        z = x * np.exp(-self.exponent.coeffs[0].real)
        if abs(z) >= 1:
            z = 0.9 * z / abs(z)
        target = 1e-13 * max(1.0, abs(x))
        for _ in range(config.NEWTON_MAX_ITER):
            err = self.gamma0(z) - x
            if abs(err) < target:
                break
            slope = self.gamma0_prime(z)
            if slope == 0:
                raise NumericalFailureError("gamma_0' vanished during inversion", z=z)
            step = err / slope
            while abs(z - step) >= 1:
                step /= 2
            z = z - step
        else:
            raise NumericalFailureError("Newton inversion of gamma_0 did not converge", x=x, residual=abs(err))
        if x.imag == 0:
            z = complex(z.real, 0.0)
        return z

    def gamma_prime(self, x):
        slope = self.gamma0_prime(self.gamma(x))
        if slope == 0:
            raise NumericalFailureError("gamma_0' vanished", x=x)
        return 1.0 / slope


def solve_theodorsen(contour, n_grid=config.THEODORSEN_GRID, tol=config.THEODORSEN_TOL,
                     max_iter=config.THEODORSEN_MAX_ITER, damping=config.THEODORSEN_DAMPING):
    if n_grid < 8 or n_grid % 2:
        raise InvalidParameterError("n_grid must be an even count >= 8")
    phi = 2 * np.pi * np.arange(n_grid) / n_grid
    psi = phi.copy()
    history = []
    for iteration in range(1, max_iter + 1):
        log_rho = np.log(contour.radius_at(psi))
        target = phi + conjugate(log_rho)
        residual = float(np.max(np.abs(target - psi)))
        history.append(residual)
        psi = psi + damping * (target - psi)
        if residual < tol:
            break
    else:
        logger.error(f"[Theo] no convergence after {max_iter} iterations, residual {history[-1]:.3e}")
        raise NumericalFailureError("Theodorsen iteration did not converge", history=history, residual=history[-1])

    if np.any(np.diff(psi) <= 0):
        raise NumericalFailureError("boundary correspondence is not increasing", iterations=iteration)
    exponent = SchwarzSeries.from_boundary(np.log(contour.radius_at(psi)))
    logger.info(f"[Theo] converged in {iteration} iterations (n_grid={n_grid}, residual={history[-1]:.2e})")
    return ConformalMap(contour=contour, phi=phi, psi=psi, exponent=exponent,
                        iterations=iteration, residual=history[-1], history=history)


def gamma0(m, z):
    return m.gamma0(z)


def gamma(m, x):
    return m.gamma(x)


def gamma_prime(m, x):
    return m.gamma_prime(x)
