"""
Symbolic transcription of the process models, written independently of the numpy
implementations so that each can check the other.
"""
from sympy import symbols, exp, lambdify, Matrix


def phycocyanin():
    # states, controls
    c_x, c_N, c_q = symbols('c_x c_N c_q', real=True)
    light, feed = symbols('I F_N', real=True)
    # uncertain parameters
    k_s, k_i, K_N = symbols('k_s k_i K_N', positive=True)
    # fixed kinetics
    u_m, u_d, Y_NX, k_m, k_sq, k_iq, k_d, K_Nq = symbols('u_m u_d Y_NX k_m k_sq k_iq k_d K_Nq', real=True)

    light_factor = light / (light + k_s + light ** 2 / k_i)
    monod = c_x * c_N / (c_N + K_N)
    rates = Matrix([
        u_m * light_factor * monod - u_d * c_x,
        -Y_NX * u_m * light_factor * monod + feed,
        k_m * light / (light + k_sq + light ** 2 / k_iq) * c_x - k_d * c_q / (c_N + K_Nq),
    ])
    variables = ((c_x, c_N, c_q), (light, feed), (k_s, k_i, K_N),
                 (u_m, u_d, Y_NX, k_m, k_sq, k_iq, k_d, K_Nq))
    return rates, variables


def semi_batch_reactor():
    c_A, c_B, c_C, T, V = symbols('c_A c_B c_C T V', real=True)
    F, T_0 = symbols('F T_0', real=True)
    theta_1, A_2, theta_4 = symbols('theta_1 A_2 theta_4', real=True)
    k1_ref, T1_ref, E2, T2_ref, c_in, T_in, dH_1, dH_2 = \
        symbols('k1_ref T1_ref E2 T2_ref c_in T_in dH_1 dH_2', real=True)

    k_1 = k1_ref * exp(1000 * theta_1 * (1 / T1_ref - 1 / T))
    k_2 = A_2 * exp(E2 * (1 / T2_ref - 1 / T))
    rates = Matrix([
        -k_1 * c_A + F / V * (c_in - c_A),
        k_1 * c_A / 2 - k_2 * c_B - F / V * c_B,
        3 * k_2 * c_B - F / V * c_C,
        F / V * (T_in - T) + dH_1 * k_1 * c_A - dH_2 * k_2 * c_B + theta_4 * (T_0 - T) / V,
        F,
    ])
    variables = ((c_A, c_B, c_C, T, V), (F, T_0), (theta_1, A_2, theta_4),
                 (k1_ref, T1_ref, E2, T2_ref, c_in, T_in, dH_1, dH_2))
    return rates, variables


def numeric_rates(model, constants):
    """
    Compile a symbolic model into a plain function f(state, control, params).
    :param model: one of the model builders above.
    :param constants: values of the fixed constants, in the builder's order.
    """
    rates, (state, control, params, fixed) = model()
    rates = rates.subs(dict(zip(fixed, constants)))
    compiled = lambdify((state, control, params), list(rates), modules="math")

    def f(x, u, p):
        return [float(v) for v in compiled(tuple(x), tuple(u), tuple(p))]

    return f


if __name__ == '__main__':
    rates, variables = phycocyanin()
    print(rates)
