from setuptools import find_packages, setup


def parse_requirements_file(path):
    return [line.rstrip() for line in open(path, "r") if line.strip()]


reqs_main = parse_requirements_file("requirements.txt")

setup(
    name="ocql",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={"ocql.conf": ["*.yaml", "env/*.yaml"]},
    description="Oracle-assisted constrained Q-learning for batch processes under uncertainty.",
    license="MIT",
    version=0.1,
    python_requires=">=3.8",
    install_requires=reqs_main,
    extras_require={"dev": ["pytest >= 7.0"]},
    entry_points={"console_scripts": ["ocql=ocql.cli:main"]},
)
