from setuptools import setup

setup(name='HWAwareNAS',
      version='0.1',
      description='Hardware-aware latency prediction for cell-based neural architecture search.',
      license='MIT',
      packages=['HWAwareNAS', 'HWAwareNAS.latency'],
      install_requires=['networkx', 'numpy', 'pandas'],
      extras_require={'tests': ['pytest']},
      entry_points={'console_scripts': ['hwaware-latency=HWAwareNAS.latency.cli:main']},
      zip_safe=False)
