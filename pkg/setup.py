from setuptools import setup, find_packages

setup(
    name="recon-ccbm",
    version="1.0",
    packages=find_packages(exclude=["tests"]),
    py_modules=["recon_cli"],
    install_requires=["numpy", "scipy", "pandas"],
    entry_points={"console_scripts": ["recon=recon_cli:main"]},
)
