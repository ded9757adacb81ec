from setuptools import setup


def parse_requirements(filename):
    with open(filename, "r") as file:
        lines = (line.strip() for line in file)
        return [line for line in lines if line and not line.startswith("#")]


reqs = parse_requirements("requirements.txt")

setup(
    name="kernel_bounds",
    version="0.1.0",
    description="Worst-case bounds for kernel regression under ellipsoidal bounded noise.",
    entry_points={
        "console_scripts": [
            "kernel_bounds = kernel_bounds.scripts.kernel_bounds:main",
        ]
    },
    install_requires=reqs,
    extras_require={"test": ["pytest"]},
    packages=[
        "kernel_bounds",
        "kernel_bounds.scripts",
    ],
)
